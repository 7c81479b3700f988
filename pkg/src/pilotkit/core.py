"""Domain types, lifecycle state machines and the append-only event log.

Everything measurable about a run is derived from :class:`EventLog`; the
manager records one :class:`EventRecord` per state transition plus a few
markers (pilot startup, data staging, stream messages).
"""
from __future__ import annotations

import csv
import io
import itertools
import os
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple

from .errors import ClockRegression, IllegalTransition, InvalidDescription, MalformedLog


class PilotState(str, Enum):
    NEW = "NEW"
    SUBMITTED = "SUBMITTED"
    QUEUED = "QUEUED"
    ACTIVE = "ACTIVE"
    DONE = "DONE"
    FAILED = "FAILED"
    CANCELED = "CANCELED"


class UnitState(str, Enum):
    NEW = "NEW"
    PENDING = "PENDING"
    BOUND = "BOUND"
    RUNNING = "RUNNING"
    DONE = "DONE"
    FAILED = "FAILED"
    CANCELED = "CANCELED"


class EntityType(str, Enum):
    PILOT = "PILOT"
    UNIT = "UNIT"
    DATA_UNIT = "DATA_UNIT"
    EXPERIMENT = "EXPERIMENT"


PILOT_EVENTS = ("submit", "queue", "activate", "complete", "fail", "cancel")
UNIT_EVENTS = ("submit", "bind", "run", "complete", "fail", "cancel")

P, U = PilotState, UnitState

PILOT_TRANSITIONS: Dict[Tuple[PilotState, str], PilotState] = {
    (P.NEW, "submit"): P.SUBMITTED,
    (P.SUBMITTED, "queue"): P.QUEUED,
    (P.SUBMITTED, "fail"): P.FAILED,
    (P.SUBMITTED, "cancel"): P.CANCELED,
    (P.QUEUED, "activate"): P.ACTIVE,
    (P.QUEUED, "fail"): P.FAILED,
    (P.QUEUED, "cancel"): P.CANCELED,
    (P.ACTIVE, "complete"): P.DONE,
    (P.ACTIVE, "fail"): P.FAILED,
    (P.ACTIVE, "cancel"): P.CANCELED,
}

# RUNNING -> CANCELED is needed so that canceling a pilot can stop units
# that are already executing on it.
UNIT_TRANSITIONS: Dict[Tuple[UnitState, str], UnitState] = {
    (U.NEW, "submit"): U.PENDING,
    (U.PENDING, "bind"): U.BOUND,
    (U.PENDING, "cancel"): U.CANCELED,
    (U.BOUND, "run"): U.RUNNING,
    (U.BOUND, "cancel"): U.CANCELED,
    (U.RUNNING, "complete"): U.DONE,
    (U.RUNNING, "fail"): U.FAILED,
    (U.RUNNING, "cancel"): U.CANCELED,
}

PILOT_TERMINAL: FrozenSet[PilotState] = frozenset({P.DONE, P.FAILED, P.CANCELED})
UNIT_TERMINAL: FrozenSet[UnitState] = frozenset({U.DONE, U.FAILED, U.CANCELED})

del P, U


def transition(state, event: str):
    """Return the successor of ``state`` under ``event`` or raise IllegalTransition."""
    if isinstance(state, PilotState):
        table = PILOT_TRANSITIONS
    elif isinstance(state, UnitState):
        table = UNIT_TRANSITIONS
    else:
        raise TypeError(f"not a lifecycle state: {state!r}")
    try:
        return table[(state, event)]
    except KeyError:
        raise IllegalTransition(f"{type(state).__name__}.{state.value} has no '{event}' transition") from None


def successors(state) -> FrozenSet:
    table = PILOT_TRANSITIONS if isinstance(state, PilotState) else UNIT_TRANSITIONS
    return frozenset(dst for (src, _), dst in table.items() if src == state)


def is_terminal(state) -> bool:
    return state in PILOT_TERMINAL or state in UNIT_TERMINAL


# ---------------------------------------------------------------------------
# descriptions

BUILTIN_KERNELS = frozenset({
    "sleep", "busy_spin", "wordcount_map", "wordcount_reduce", "kmeans_assign",
    "kmeans_update", "stream_produce", "stream_consume", "noop",
})


@dataclass(frozen=True)
class KernelSpec:
    """What a compute-unit executes: an external argv or a named builtin."""

    variant: str  # "EXTERNAL" | "BUILTIN"
    name: Optional[str] = None
    argv: Tuple[str, ...] = ()
    parameters: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.variant == "EXTERNAL":
            if not self.argv:
                raise InvalidDescription("EXTERNAL kernel needs a non-empty argv")
            object.__setattr__(self, "argv", tuple(self.argv))
        elif self.variant == "BUILTIN":
            if self.name not in BUILTIN_KERNELS:
                raise InvalidDescription(f"unknown builtin kernel {self.name!r}")
        else:
            raise InvalidDescription(f"unknown kernel variant {self.variant!r}")

    @classmethod
    def builtin(cls, name: str, **parameters) -> "KernelSpec":
        return cls("BUILTIN", name=name, parameters=parameters)

    @classmethod
    def external(cls, argv: Iterable[str], **parameters) -> "KernelSpec":
        return cls("EXTERNAL", argv=tuple(argv), parameters=parameters)

    @property
    def label(self) -> str:
        return self.name if self.variant == "BUILTIN" else "external"

    def sim_duration_ms(self) -> int:
        """Virtual run time used by simulated backends."""
        params = self.parameters
        if "sim_duration_ms" in params:
            return int(params["sim_duration_ms"])
        if self.name in ("sleep", "busy_spin") and "duration" in params:
            return int(round(float(params["duration"]) * 1000))
        return 0


@dataclass(frozen=True)
class PilotDescription:
    backend_id: str
    slots: int = 1
    cores_per_slot: int = 1
    walltime_limit: float = 86400.0
    queue_name: Optional[str] = None
    work_dir: Optional[str] = None

    def __post_init__(self):
        if int(self.slots) < 1:
            raise InvalidDescription("slots must be >= 1")
        if int(self.cores_per_slot) < 1:
            raise InvalidDescription("cores_per_slot must be >= 1")
        if not float(self.walltime_limit) > 0:
            raise InvalidDescription("walltime_limit must be > 0")


@dataclass(frozen=True)
class ComputeUnitDescription:
    kernel: KernelSpec
    arguments: Tuple[str, ...] = ()
    slots_required: int = 1
    depends_on: FrozenSet[str] = frozenset()
    input_data: Tuple[str, ...] = ()
    output_data: Optional[str] = None
    affinity: Optional[str] = None

    def __post_init__(self):
        if int(self.slots_required) < 1:
            raise InvalidDescription("slots_required must be >= 1")
        object.__setattr__(self, "arguments", tuple(self.arguments))
        object.__setattr__(self, "depends_on", frozenset(self.depends_on))
        # inputs keep their declared order; duplicates are dropped
        object.__setattr__(self, "input_data", tuple(dict.fromkeys(self.input_data)))


@dataclass(frozen=True)
class BindingRecord:
    unit_id: str
    pilot_id: str
    slot_index: int
    bind_time: int
    slots: Tuple[int, ...] = ()


class _Lifecycle:
    state: object
    state_history: List[Tuple[object, int]]

    def advance(self, event: str, ts: int):
        new = transition(self.state, event)
        if self.state_history and ts < self.state_history[-1][1]:
            raise ClockRegression(f"{self.id}: {ts} < {self.state_history[-1][1]}")
        self.state = new
        self.state_history.append((new, ts))
        return new

    def timestamp(self, state) -> Optional[int]:
        for s, ts in self.state_history:
            if s == state:
                return ts
        return None

    @property
    def terminal(self) -> bool:
        return is_terminal(self.state)


@dataclass(eq=False)
class Pilot(_Lifecycle):
    id: str
    description: PilotDescription
    state: PilotState = PilotState.NEW
    state_history: List[Tuple[PilotState, int]] = field(default_factory=list)
    capacity_free: int = 0

    def __post_init__(self):
        self.capacity_free = self.description.slots


@dataclass(eq=False)
class ComputeUnit(_Lifecycle):
    id: str
    description: ComputeUnitDescription
    name: str = ""
    state: UnitState = UnitState.NEW
    state_history: List[Tuple[UnitState, int]] = field(default_factory=list)
    binding: Optional[BindingRecord] = None
    exit_info: Optional[Tuple[int, str]] = None
    submit_seq: int = 0
    release_at: int = 0


class IdGenerator:
    """``<prefix>-<counter>`` identifiers, zero padded so they sort numerically."""

    def __init__(self):
        self._counters: Dict[str, itertools.count] = {}
        self._lock = threading.Lock()

    def next(self, prefix: str) -> str:
        with self._lock:
            counter = self._counters.setdefault(prefix, itertools.count(1))
            return f"{prefix}-{next(counter):06d}"


# ---------------------------------------------------------------------------
# event log

CSV_HEADER = ("timestamp_ms", "entity_type", "entity_id", "event", "detail")


@dataclass(frozen=True)
class EventRecord:
    timestamp_ms: int
    entity_type: EntityType
    entity_id: str
    event: str
    detail: str = ""


def format_detail(**items) -> str:
    """Render ``key=value`` pairs; list values are joined with ``|``."""
    parts = []
    for key, value in items.items():
        if value is None:
            continue
        if isinstance(value, (list, tuple, set, frozenset)):
            if not value:
                continue
            value = "|".join(str(v) for v in value)
        text = str(value).replace(";", ",").replace("\n", " ").replace("\r", " ").replace("\x00", "")
        parts.append(f"{key}={text}")
    return ";".join(parts)


def parse_detail(detail: str) -> Dict[str, str]:
    out = {}
    if not detail:
        return out
    for part in detail.split(";"):
        key, sep, value = part.partition("=")
        if sep:
            out[key] = value
    return out


def split_list(value: Optional[str]) -> List[str]:
    return [v for v in (value or "").split("|") if v]


class EventLog:
    """Append-only, thread-safe event sink.

    ``record`` stamps the event with ``clock()`` while holding the lock, which
    keeps timestamps globally non-decreasing even with concurrent producers.
    """

    def __init__(self, clock: Optional[Callable[[], int]] = None):
        self._clock = clock
        self._records: List[EventRecord] = []
        self._last: Dict[Tuple[EntityType, str], int] = {}
        self._lock = threading.Lock()

    def set_clock(self, clock: Callable[[], int]):
        self._clock = clock

    def append(self, record: EventRecord) -> int:
        with self._lock:
            return self._append(record)

    def _append(self, record: EventRecord) -> int:
        key = (record.entity_type, record.entity_id)
        last = self._last.get(key)
        if last is not None and record.timestamp_ms < last:
            raise ClockRegression(
                f"{record.entity_type.value} {record.entity_id}: "
                f"{record.timestamp_ms} precedes {last}")
        self._records.append(record)
        self._last[key] = record.timestamp_ms
        return len(self._records) - 1

    def record(self, entity_type: EntityType, entity_id: str, event: str, detail: str = "",
               ts: Optional[int] = None) -> EventRecord:
        with self._lock:
            if ts is None:
                ts = self._clock()
            rec = EventRecord(int(ts), EntityType(entity_type), entity_id, str(event), detail)
            self._append(rec)
            return rec

    @property
    def records(self) -> List[EventRecord]:
        with self._lock:
            return list(self._records)

    def __len__(self):
        return len(self._records)

    def __iter__(self):
        return iter(self.records)

    def to_csv(self) -> str:
        return records_to_csv(self.records)

    def write_csv(self, path) -> str:
        text = self.to_csv()
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        return str(path)


def records_to_csv(records: Iterable[EventRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    # with a "\n" terminator a bare "\r" would go out unquoted
    quoted = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_ALL)
    writer.writerow(CSV_HEADER)
    for r in records:
        row = (r.timestamp_ms, r.entity_type.value, r.entity_id, r.event, r.detail)
        if any("\r" in str(v) for v in row[2:]):
            quoted.writerow(row)
        else:
            writer.writerow(row)
    return buf.getvalue()


def parse_csv(text: str) -> List[EventRecord]:
    rows = list(csv.reader(io.StringIO(text, newline="")))
    if not rows:
        raise MalformedLog("event log is empty")
    if tuple(rows[0]) != CSV_HEADER:
        raise MalformedLog(f"unexpected header {rows[0]!r}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 5:
            raise MalformedLog(f"line {lineno}: expected 5 fields, got {len(row)}")
        try:
            out.append(EventRecord(int(row[0]), EntityType(row[1]), row[2], row[3], row[4]))
        except ValueError as exc:
            raise MalformedLog(f"line {lineno}: {exc}") from None
    return out


def read_csv(path) -> List[EventRecord]:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_csv(fh.read())
