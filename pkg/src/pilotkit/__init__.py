"""pilotkit: pilots as resource placeholders with late-bound compute- and data-units."""
from .backend import BackendDescriptor, BackendKind
from .core import (ComputeUnitDescription, EntityType, EventLog, EventRecord, KernelSpec,
                   PilotDescription, PilotState, UnitState)
from .data import DataUnitDescription
from .manager import ManagerConfig, PilotManager
from .workload import WorkloadGraph

__version__ = "0.1.0"

__all__ = [
    "BackendDescriptor", "BackendKind", "ComputeUnitDescription", "DataUnitDescription",
    "EntityType", "EventLog", "EventRecord", "KernelSpec", "ManagerConfig", "PilotDescription",
    "PilotManager", "PilotState", "UnitState", "WorkloadGraph",
]
