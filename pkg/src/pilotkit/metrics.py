"""Metrics derived from event logs alone: makespan, runtimes, overheads, utilization."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Dict, Iterable, List, Optional, Sequence

from .core import EntityType, EventRecord, parse_detail
from .errors import MalformedLog

UNIT_TERMINAL_EVENTS = ("DONE", "FAILED", "CANCELED")
PILOT_TERMINAL_EVENTS = ("DONE", "FAILED", "CANCELED")


def percentile(values: Sequence[float], q: float) -> Optional[float]:
    """Nearest-rank percentile; ``None`` for an empty sample."""
    if not values:
        return None
    ordered = sorted(values)
    rank = max(1, math.ceil(q / 100.0 * len(ordered)))
    return ordered[rank - 1]


@dataclass
class RunMetrics:
    makespan_ms: int = 0
    task_runtime_mean_ms: Optional[float] = None
    task_runtime_p99_ms: Optional[float] = None
    pilot_overhead_ms: Optional[float] = None
    throughput_per_s: float = 0.0
    latency_p50_ms: Optional[float] = None
    latency_p99_ms: Optional[float] = None
    utilization: float = 0.0
    units_done: int = 0
    units_failed: int = 0
    units_canceled: int = 0
    messages_produced: int = 0
    messages_consumed: int = 0
    messages_dropped: int = 0

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class LogIndex:
    """Per-entity first-occurrence timestamps of every event in a log."""

    def __init__(self, records: Iterable[EventRecord]):
        self.records: List[EventRecord] = list(records)
        self.first: Dict[tuple, Dict[str, int]] = {}
        self.details: Dict[tuple, Dict[str, Dict[str, str]]] = {}
        self.order: Dict[EntityType, List[str]] = {t: [] for t in EntityType}
        for rec in self.records:
            key = (rec.entity_type, rec.entity_id)
            if key not in self.first:
                self.first[key] = {}
                self.details[key] = {}
                self.order[rec.entity_type].append(rec.entity_id)
            self.first[key].setdefault(rec.event, rec.timestamp_ms)
            self.details[key].setdefault(rec.event, parse_detail(rec.detail))
        self.end = max((r.timestamp_ms for r in self.records), default=0)

    def ids(self, etype: EntityType) -> List[str]:
        return self.order[etype]

    def ts(self, etype: EntityType, eid: str, event: str) -> Optional[int]:
        return self.first.get((etype, eid), {}).get(event)

    def detail(self, etype: EntityType, eid: str, event: str) -> Dict[str, str]:
        return self.details.get((etype, eid), {}).get(event, {})

    def unit_end(self, uid: str) -> Optional[int]:
        for ev in UNIT_TERMINAL_EVENTS:
            t = self.ts(EntityType.UNIT, uid, ev)
            if t is not None:
                return t
        return None

    def pilot_end(self, pid: str) -> int:
        for ev in PILOT_TERMINAL_EVENTS:
            t = self.ts(EntityType.PILOT, pid, ev)
            if t is not None:
                return t
        return self.end

    def first_submit(self) -> Optional[int]:
        starts = [self.ts(EntityType.PILOT, p, "SUBMITTED") for p in self.ids(EntityType.PILOT)]
        starts += [self.ts(EntityType.UNIT, u, "PENDING") for u in self.ids(EntityType.UNIT)]
        starts = [t for t in starts if t is not None]
        return min(starts) if starts else None

    def makespan(self) -> int:
        ends = [t for t in (self.unit_end(u) for u in self.ids(EntityType.UNIT)) if t is not None]
        start = self.first_submit()
        if not ends or start is None:
            return 0
        return max(ends) - start


def makespan_ms(records: Iterable[EventRecord]) -> int:
    return LogIndex(records).makespan()


def message_latencies(records: Iterable[EventRecord]):
    """``(produced, consumed, dropped, latencies, first_produce, last_consume)`` over all brokers."""
    produced_at: Dict[tuple, int] = {}
    latencies: List[int] = []
    produced = dropped = 0
    first_produce = last_consume = None
    for rec in records:
        if rec.entity_type is not EntityType.EXPERIMENT:
            continue
        if rec.event == "MSG_PRODUCED":
            produced += 1
            produced_at[(rec.entity_id, parse_detail(rec.detail).get("msg"))] = rec.timestamp_ms
            if first_produce is None:
                first_produce = rec.timestamp_ms
        elif rec.event == "MSG_DROPPED":
            dropped += 1
        elif rec.event == "MSG_CONSUMED":
            key = (rec.entity_id, parse_detail(rec.detail).get("msg"))
            if key not in produced_at:
                raise MalformedLog(f"message {key[1]} of {key[0]} consumed but never produced")
            latencies.append(rec.timestamp_ms - produced_at[key])
            last_consume = rec.timestamp_ms
    return produced, len(latencies), dropped, latencies, first_produce, last_consume


def derive_metrics(records: Iterable[EventRecord]) -> RunMetrics:
    """Compute one run's metrics from its event records."""
    idx = LogIndex(records)
    if not idx.records:
        raise MalformedLog("event log has no records")
    m = RunMetrics(makespan_ms=idx.makespan())

    runtimes = []
    busy = 0
    ends = []
    for uid in idx.ids(EntityType.UNIT):
        slots = int(idx.detail(EntityType.UNIT, uid, "NEW").get("slots", 1))
        run = idx.ts(EntityType.UNIT, uid, "RUNNING")
        end = idx.unit_end(uid)
        if end is not None:
            ends.append(end)
        if idx.ts(EntityType.UNIT, uid, "DONE") is not None:
            m.units_done += 1
            runtimes.append(end - run)
        elif idx.ts(EntityType.UNIT, uid, "FAILED") is not None:
            m.units_failed += 1
        elif idx.ts(EntityType.UNIT, uid, "CANCELED") is not None:
            m.units_canceled += 1
        if run is not None and end is not None:
            busy += (end - run) * slots
    if runtimes:
        m.task_runtime_mean_ms = sum(runtimes) / len(runtimes)
        m.task_runtime_p99_ms = percentile(runtimes, 99)

    overheads = []
    capacity = 0
    actives = []
    for pid in idx.ids(EntityType.PILOT):
        sub = idx.ts(EntityType.PILOT, pid, "SUBMITTED")
        act = idx.ts(EntityType.PILOT, pid, "ACTIVE")
        if act is None:
            continue
        actives.append(act)
        if sub is not None:
            overheads.append(act - sub)
        slots = int(idx.detail(EntityType.PILOT, pid, "NEW").get("slots", 1))
        capacity += slots * (idx.pilot_end(pid) - act)
    if overheads:
        m.pilot_overhead_ms = sum(overheads) / len(overheads)
    m.utilization = busy / capacity if capacity > 0 else 0.0

    produced, consumed, dropped, lat, first_p, last_c = message_latencies(idx.records)
    m.messages_produced, m.messages_consumed, m.messages_dropped = produced, consumed, dropped
    if lat:
        m.latency_p50_ms = percentile(lat, 50)
        m.latency_p99_ms = percentile(lat, 99)
    if produced or consumed:
        span = (last_c - first_p) if consumed else 0
        m.throughput_per_s = consumed * 1000.0 / span if span > 0 else 0.0
    elif ends:
        starts = actives or [t for t in (idx.ts(EntityType.UNIT, u, "RUNNING")
                                         for u in idx.ids(EntityType.UNIT)) if t is not None]
        span = max(ends) - min(starts) if starts else 0
        m.throughput_per_s = m.units_done * 1000.0 / span if span > 0 else 0.0
    return m


def format_value(value) -> str:
    """Stable CSV rendering: integers as-is, floats with six decimals, ``None`` empty."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)
