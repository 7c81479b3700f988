"""Local executor: builtin kernels in worker threads, EXTERNAL kernels as child processes."""
from __future__ import annotations

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor

from ..core import ComputeUnit, Pilot
from ..errors import PilotNotActive, SlotOccupied
from .base import Backend, BackendHandle, ClockKind

log = logging.getLogger(__name__)


class LocalBackend(Backend):
    clock_kind = ClockKind.WALL

    def __init__(self, descriptor, listener):
        super().__init__(descriptor, listener)
        self.max_processes = int(descriptor.parameters["max_processes"])
        self.startup_s = float(descriptor.parameters.get("startup_overhead", 0))

    @property
    def capacity(self):
        return self.max_processes

    def submit_pilot(self, pilot: Pilot) -> BackendHandle:
        self.check_capacity(pilot.description)
        handle = BackendHandle(self.backend_id, pilot.id, self.clock_kind, pilot.description.slots)
        handle.extra.update(
            executor=ThreadPoolExecutor(max_workers=pilot.description.slots,
                                        thread_name_prefix=pilot.id),
            procs={}, cancels={}, lock=threading.Lock(), timer=None)
        self.handles.append(handle)
        threading.Thread(target=self._bootstrap, args=(handle,), daemon=True,
                         name=f"{pilot.id}-boot").start()
        return handle

    def _bootstrap(self, handle):
        self.listener.pilot_startup(handle.token)
        if self.startup_s:
            time.sleep(self.startup_s)
        if handle.closed:
            return
        handle.active = True
        timer = threading.Timer(self.listener.pilot_walltime(handle.token), self._expire, (handle,))
        timer.daemon = True
        handle.extra["timer"] = timer
        timer.start()
        self.listener.pilot_activated(handle.token)

    def _expire(self, handle):
        if handle.closed:
            return
        self.listener.pilot_expired(handle.token)

    def launch_unit(self, handle: BackendHandle, unit: ComputeUnit, slots) -> None:
        if not handle.active or handle.closed:
            raise PilotNotActive(f"pilot {handle.token} is not active")
        with handle.extra["lock"]:
            for s in slots:
                if s in handle.busy:
                    raise SlotOccupied(f"slot {s} of {handle.token} hosts {handle.busy[s]}")
            for s in slots:
                handle.busy[s] = unit.id
            cancel = threading.Event()
            handle.extra["cancels"][unit.id] = cancel
        handle.extra["executor"].submit(self._run, handle, unit, cancel)

    def _run(self, handle, unit, cancel):
        from ..kernels import run_kernel

        code, message = 1, "unit did not start"
        started = False
        missing = None
        try:
            if self.launch_overhead_ms:
                cancel.wait(self.launch_overhead_ms / 1000.0)
            missing = self.listener.inputs_missing(unit.id)
            if missing is None:
                return
            for du in missing:
                self.listener.stage(unit.id, du)
            ctx = self.listener.unit_started(unit.id, cancel=cancel,
                                             register_process=self._registrar(handle, unit.id))
            if ctx is None:
                return
            started = True
            code, message = run_kernel(ctx, simulated=False)
        except Exception as exc:  # staging or bookkeeping failure surfaces as unit failure
            log.exception("unit %s crashed", unit.id)
            code, message = 1, f"{type(exc).__name__}: {exc}"
        finally:
            with handle.extra["lock"]:
                self.release_slots(handle, unit.id)
                handle.extra["procs"].pop(unit.id, None)
                handle.extra["cancels"].pop(unit.id, None)
            if started or missing is not None:
                self.listener.unit_finished(unit.id, code, message)

    def _registrar(self, handle, unit_id):
        def register(proc):
            with handle.extra["lock"]:
                handle.extra["procs"][unit_id] = proc
                if handle.closed:
                    proc.terminate()
        return register

    def cancel_pilot(self, handle: BackendHandle) -> None:
        handle.active = False
        handle.closed = True
        timer = handle.extra.get("timer")
        if timer is not None:
            timer.cancel()
        with handle.extra["lock"]:
            for ev in handle.extra["cancels"].values():
                ev.set()
            for proc in handle.extra["procs"].values():
                try:
                    proc.terminate()
                except OSError:
                    pass
        handle.extra["executor"].shutdown(wait=False, cancel_futures=True)

    def shutdown(self) -> None:
        for handle in self.handles:
            if not handle.closed:
                self.cancel_pilot(handle)
