"""Replay an event log and check the lifecycle, capacity, binding and data invariants."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Set

from .core import (PILOT_TRANSITIONS, UNIT_TRANSITIONS, EntityType, EventRecord, PilotState,
                   UnitState, parse_detail, split_list)

DATA_EVENTS = frozenset({"NEW", "PENDING", "AVAILABLE", "FAILED", "STAGE_START", "STAGE_END", "DROPPED"})
PILOT_MARKERS = frozenset({"STARTUP"})


@dataclass(frozen=True)
class Violation:
    index: int
    entity_id: str
    rule: str
    message: str

    def __str__(self):
        return f"event {self.index}: {self.entity_id}: [{self.rule}] {self.message}"


class _UnitInfo:
    __slots__ = ("slots", "deps", "inputs", "pilot", "held")

    def __init__(self, detail: Dict[str, str]):
        self.slots = int(detail.get("slots", 1))
        self.deps = split_list(detail.get("deps"))
        self.inputs = split_list(detail.get("inputs"))
        self.pilot: Optional[str] = None
        self.held: List[int] = []


def validate_records(records: Iterable[EventRecord]) -> List[Violation]:
    """Return every invariant violation found in ``records`` (empty when the log is sound)."""
    out: List[Violation] = []
    last_ts: Dict[tuple, int] = {}
    pilot_state: Dict[str, PilotState] = {}
    pilot_slots: Dict[str, int] = {}
    occupancy: Dict[str, Dict[int, str]] = {}
    unit_state: Dict[str, UnitState] = {}
    units: Dict[str, _UnitInfo] = {}
    replicas: Dict[str, Set[str]] = {}

    def bad(i, eid, rule, msg):
        out.append(Violation(i, eid, rule, msg))

    def release(info: _UnitInfo, uid: str):
        occ = occupancy.get(info.pilot, {})
        for s in info.held:
            if occ.get(s) == uid:
                del occ[s]
        info.held = []

    for i, rec in enumerate(records):
        eid, ev = rec.entity_id, rec.event
        key = (rec.entity_type, eid)
        if key in last_ts and rec.timestamp_ms < last_ts[key]:
            bad(i, eid, "monotonic", f"timestamp {rec.timestamp_ms} < previous {last_ts[key]}")
        last_ts[key] = max(rec.timestamp_ms, last_ts.get(key, rec.timestamp_ms))
        detail = parse_detail(rec.detail)

        if rec.entity_type is EntityType.PILOT:
            if ev in PILOT_MARKERS:
                if eid not in pilot_state:
                    bad(i, eid, "lifecycle", f"marker {ev} for unknown pilot")
                continue
            if ev == "NEW":
                if eid in pilot_state:
                    bad(i, eid, "lifecycle", "pilot created twice")
                pilot_state[eid] = PilotState.NEW
                pilot_slots[eid] = int(detail.get("slots", 1))
                occupancy[eid] = {}
                continue
            cur = pilot_state.get(eid)
            try:
                new = PilotState(ev)
            except ValueError:
                bad(i, eid, "lifecycle", f"unknown pilot event {ev!r}")
                continue
            if cur is None:
                bad(i, eid, "lifecycle", f"{ev} before NEW")
            elif new not in {dst for (src, _), dst in PILOT_TRANSITIONS.items() if src is cur}:
                bad(i, eid, "lifecycle", f"illegal pilot transition {cur.value} -> {ev}")
            pilot_state[eid] = new
            if new in (PilotState.DONE, PilotState.FAILED, PilotState.CANCELED) and occupancy.get(eid):
                bad(i, eid, "capacity", f"pilot ended while hosting {sorted(occupancy[eid].values())}")

        elif rec.entity_type is EntityType.UNIT:
            if ev == "NEW":
                if eid in unit_state:
                    bad(i, eid, "lifecycle", "unit created twice")
                unit_state[eid] = UnitState.NEW
                units[eid] = _UnitInfo(detail)
                continue
            cur = unit_state.get(eid)
            try:
                new = UnitState(ev)
            except ValueError:
                bad(i, eid, "lifecycle", f"unknown unit event {ev!r}")
                continue
            if cur is None:
                bad(i, eid, "lifecycle", f"{ev} before NEW")
                unit_state[eid] = new
                continue
            if new not in {dst for (src, _), dst in UNIT_TRANSITIONS.items() if src is cur}:
                bad(i, eid, "lifecycle", f"illegal unit transition {cur.value} -> {ev}")
            unit_state[eid] = new
            info = units[eid]
            if new is UnitState.BOUND:
                pid = detail.get("pilot")
                slots = [int(s) for s in split_list(detail.get("slot"))]
                info.pilot = pid
                if pid not in pilot_state:
                    bad(i, eid, "late-binding", f"bound to unknown pilot {pid!r}")
                    continue
                if pilot_state[pid] is not PilotState.ACTIVE:
                    bad(i, eid, "late-binding", f"bound to {pid} while {pilot_state[pid].value}")
                if len(slots) != info.slots:
                    bad(i, eid, "capacity", f"holds {len(slots)} slots, needs {info.slots}")
                occ = occupancy[pid]
                for s in slots:
                    if not 0 <= s < pilot_slots[pid]:
                        bad(i, eid, "capacity", f"slot {s} outside pilot {pid} of {pilot_slots[pid]}")
                    elif s in occ:
                        bad(i, eid, "capacity", f"slot {s} of {pid} already held by {occ[s]}")
                    else:
                        occ[s] = eid
                info.held = slots
                if len(occ) > pilot_slots[pid]:
                    bad(i, eid, "capacity", f"pilot {pid} over capacity")
            elif new is UnitState.RUNNING:
                for dep in info.deps:
                    if unit_state.get(dep) is not UnitState.DONE:
                        state = unit_state.get(dep)
                        bad(i, eid, "dependency",
                            f"RUNNING while dependency {dep} is {state.value if state else 'unknown'}")
                for du in info.inputs:
                    if info.pilot not in replicas.get(du, ()):
                        bad(i, eid, "locality", f"RUNNING on {info.pilot} without a replica of {du}")
            elif new in (UnitState.DONE, UnitState.FAILED, UnitState.CANCELED):
                release(info, eid)

        elif rec.entity_type is EntityType.DATA_UNIT:
            if ev not in DATA_EVENTS:
                bad(i, eid, "lifecycle", f"unknown data event {ev!r}")
            elif ev == "AVAILABLE" or ev == "STAGE_END":
                replicas.setdefault(eid, set()).add(detail.get("pilot"))
            elif ev == "DROPPED":
                replicas.setdefault(eid, set()).discard(detail.get("pilot"))
    return out


def validate_log(path) -> List[Violation]:
    from .core import read_csv

    return validate_records(read_csv(path))
