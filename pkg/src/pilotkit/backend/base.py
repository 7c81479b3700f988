from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional

from ..core import ComputeUnit, Pilot, PilotDescription
from ..dists import Distribution
from ..errors import CapacityExceeded, InvalidDescription


class BackendKind(str, Enum):
    LOCAL = "LOCAL"
    SIM_BATCH = "SIM_BATCH"
    SIM_CLOUD = "SIM_CLOUD"


class ClockKind(str, Enum):
    WALL = "WALL"
    VIRTUAL = "VIRTUAL"


REQUIRED = {
    BackendKind.SIM_BATCH: ("queue_wait", "startup_overhead", "seed"),
    BackendKind.SIM_CLOUD: ("provision_delay", "seed"),
    BackendKind.LOCAL: ("max_processes",),
}

# optional durations/sizes; every one must be >= 0 when present
NONNEGATIVE = ("startup_overhead", "provision_delay", "launch_overhead", "bandwidth",
               "clock_resolution", "store_capacity_bytes", "max_slots")


@dataclass(frozen=True)
class BackendDescriptor:
    """Declares one resource infrastructure.

    SIM_BATCH parameters: ``queue_wait`` (distribution, seconds),
    ``startup_overhead`` (s), ``clock_resolution`` (ms, default 1), ``seed``.
    SIM_CLOUD: ``provision_delay`` (s), ``seed``. LOCAL: ``max_processes``.
    Every kind also accepts ``launch_overhead`` (s, bind-to-run delay),
    ``bandwidth`` (bytes/s for staging; unset means instantaneous),
    ``store_capacity_bytes`` and, for SIM kinds, ``max_slots``.
    """

    backend_id: str
    kind: BackendKind
    parameters: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", BackendKind(self.kind))
        params = dict(self.parameters)
        missing = [k for k in REQUIRED[self.kind] if k not in params]
        if missing:
            raise InvalidDescription(f"backend {self.backend_id}: missing parameters {missing}")
        for key in NONNEGATIVE:
            if params.get(key) is None:
                continue
            try:
                negative = float(params[key]) < 0
            except (TypeError, ValueError):
                raise InvalidDescription(f"backend {self.backend_id}: {key} must be a number") from None
            if negative:
                raise InvalidDescription(f"backend {self.backend_id}: {key} must be >= 0")
        if "queue_wait" in params:
            params["queue_wait"] = Distribution.parse(params["queue_wait"])
        if self.kind is BackendKind.LOCAL and int(params["max_processes"]) < 1:
            raise InvalidDescription("max_processes must be >= 1")
        object.__setattr__(self, "parameters", params)

    @property
    def is_simulated(self) -> bool:
        return self.kind is not BackendKind.LOCAL

    def with_parameters(self, **updates) -> "BackendDescriptor":
        params = dict(self.parameters)
        params.update(updates)
        return BackendDescriptor(self.backend_id, self.kind, params)

    def to_dict(self) -> dict:
        params = {}
        for key, value in self.parameters.items():
            params[key] = value.to_dict() if isinstance(value, Distribution) else value
        return {"backend_id": self.backend_id, "kind": self.kind.value, "parameters": params}

    @classmethod
    def from_dict(cls, data: Mapping) -> "BackendDescriptor":
        unknown = set(data) - {"backend_id", "kind", "parameters"}
        if unknown:
            raise InvalidDescription(f"unknown backend fields {sorted(unknown)}")
        try:
            return cls(data["backend_id"], BackendKind(data["kind"]), data.get("parameters", {}))
        except KeyError as exc:
            raise InvalidDescription(f"backend descriptor lacks {exc}") from None
        except ValueError as exc:
            raise InvalidDescription(str(exc)) from None


@dataclass(eq=False)
class BackendHandle:
    backend_id: str
    token: str
    clock_kind: ClockKind
    slots: int = 1
    active: bool = False
    closed: bool = False
    busy: Dict[int, str] = field(default_factory=dict)
    # backend-private bookkeeping (pending sim events, processes, ...)
    extra: Dict[str, Any] = field(default_factory=dict)


class Backend:
    """Adapter interface between the manager and one infrastructure.

    The manager passes itself as ``listener``; backends report progress by
    calling ``pilot_startup``, ``pilot_activated``, ``pilot_expired``,
    ``inputs_missing``, ``stage_begin``/``stage_end``, ``unit_started`` and
    ``unit_finished`` on it.
    """

    clock_kind: ClockKind

    def __init__(self, descriptor: BackendDescriptor, listener):
        self.descriptor = descriptor
        self.listener = listener
        self.handles: List[BackendHandle] = []

    @property
    def backend_id(self) -> str:
        return self.descriptor.backend_id

    @property
    def capacity(self) -> Optional[int]:
        return None

    def check_capacity(self, desc: PilotDescription):
        cap = self.capacity
        if cap is not None and desc.slots > cap:
            raise CapacityExceeded(
                f"pilot needs {desc.slots} slots, backend {self.backend_id} offers {cap}")

    @property
    def launch_overhead_ms(self) -> int:
        return int(round(float(self.descriptor.parameters.get("launch_overhead", 0)) * 1000))

    def submit_pilot(self, pilot: Pilot) -> BackendHandle:
        raise NotImplementedError

    def launch_unit(self, handle: BackendHandle, unit: ComputeUnit, slots) -> None:
        raise NotImplementedError

    def cancel_pilot(self, handle: BackendHandle) -> None:
        raise NotImplementedError

    def release_slots(self, handle: BackendHandle, unit_id: str):
        for idx in [i for i, u in handle.busy.items() if u == unit_id]:
            del handle.busy[idx]

    def shutdown(self) -> None:
        pass
