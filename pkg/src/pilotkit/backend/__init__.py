"""Resource adapters: a local process executor and simulated batch/cloud backends."""
from .base import Backend, BackendDescriptor, BackendHandle, BackendKind, ClockKind
from .local import LocalBackend
from .sim import SimBackend, SimEvent, Simulator

__all__ = [
    "Backend", "BackendDescriptor", "BackendHandle", "BackendKind", "ClockKind",
    "LocalBackend", "SimBackend", "SimEvent", "Simulator", "create_backend",
]


def create_backend(descriptor: BackendDescriptor, listener, sim=None) -> Backend:
    if descriptor.kind is BackendKind.LOCAL:
        return LocalBackend(descriptor, listener)
    if sim is None:
        raise ValueError("simulated backends need a Simulator")
    return SimBackend(descriptor, listener, sim)
