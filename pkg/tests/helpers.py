"""Small builders shared by the test modules."""
from __future__ import annotations

from typing import Dict, Iterable, Optional, Sequence

from pilotkit import (BackendDescriptor, ComputeUnitDescription, KernelSpec, ManagerConfig,
                      PilotDescription, PilotManager)
from pilotkit.core import EntityType
from pilotkit.workload import WorkloadGraph


def sim_backend(backend_id: str = "sim", queue_wait=0, startup=0, seed: int = 1, **extra) -> BackendDescriptor:
    params = {"queue_wait": queue_wait, "startup_overhead": startup, "seed": seed, **extra}
    return BackendDescriptor(backend_id, "SIM_BATCH", params)


def sim_manager(pilots: Sequence[int] = (1,), policy: str = "FIFO", work_dir: Optional[str] = None,
                **backend_params) -> PilotManager:
    backend = sim_backend(**backend_params)
    mgr = PilotManager([backend], ManagerConfig(policy), work_dir=work_dir)
    for slots in pilots:
        mgr.submit_pilot(PilotDescription(backend.backend_id, slots=slots))
    return mgr


def sleep_unit(seconds: float, deps: Iterable[str] = (), **kw) -> ComputeUnitDescription:
    return ComputeUnitDescription(KernelSpec.builtin("sleep", duration=seconds),
                                  depends_on=frozenset(deps), **kw)


def sleep_graph(durations: Sequence[float], deps: Optional[Dict[int, Sequence[int]]] = None,
                prefix: str = "u") -> WorkloadGraph:
    deps = deps or {}
    graph = WorkloadGraph()
    for i, d in enumerate(durations):
        graph.add(f"{prefix}{i}", sleep_unit(d, (f"{prefix}{j}" for j in deps.get(i, ()))))
    return graph


def events(mgr_or_records, entity_type=EntityType.UNIT, event=None, entity_id=None):
    records = getattr(mgr_or_records, "log", None)
    records = records.records if records is not None else mgr_or_records
    return [r for r in records
            if r.entity_type == entity_type
            and (event is None or r.event == event)
            and (entity_id is None or r.entity_id == entity_id)]


def ts(mgr, entity_id, event, entity_type=EntityType.UNIT) -> Optional[int]:
    found = events(mgr, entity_type, event, entity_id)
    return found[0].timestamp_ms if found else None
