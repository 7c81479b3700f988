"""Deterministic discrete-event simulation of batch and cloud resources."""
from __future__ import annotations

import heapq
import itertools
import math
import random
from typing import Callable, List, Optional

from ..core import ComputeUnit, Pilot
from ..dists import Distribution
from ..errors import PilotNotActive, SlotOccupied
from .base import Backend, BackendHandle, BackendKind, ClockKind


class SimEvent:
    __slots__ = ("fire_time_ms", "sequence", "action", "args", "daemon", "canceled", "fired")

    def __init__(self, fire_time_ms, sequence, action, args, daemon):
        self.fire_time_ms = fire_time_ms
        self.sequence = sequence
        self.action = action
        self.args = args
        self.daemon = daemon
        self.canceled = False
        self.fired = False

    def __lt__(self, other):
        return (self.fire_time_ms, self.sequence) < (other.fire_time_ms, other.sequence)

    def __repr__(self):
        name = getattr(self.action, "__name__", self.action)
        return f"SimEvent(t={self.fire_time_ms}, seq={self.sequence}, {name})"


class Simulator:
    """Virtual clock plus a priority queue ordered by ``(fire_time, sequence)``.

    Daemon events (pilot walltime expiry) do not keep the simulation alive:
    ``run_until_idle`` stops once only daemon events remain.

    ``request_hook`` asks for ``hook`` to run once every event at the current
    instant has been processed; the manager uses it to batch scheduling
    decisions per instant.
    """

    def __init__(self, hook: Optional[Callable[[], None]] = None):
        self.now = 0
        self.hook = hook
        self._queue: List[SimEvent] = []
        self._seq = itertools.count()
        self._live = 0
        self._hook_requested = False

    def schedule_at(self, t: int, action, *args, daemon=False) -> SimEvent:
        t = int(t)
        if t < self.now:
            raise ValueError(f"cannot schedule at {t} < now {self.now}")
        ev = SimEvent(t, next(self._seq), action, args, daemon)
        heapq.heappush(self._queue, ev)
        if not daemon:
            self._live += 1
        return ev

    def schedule_in(self, delay: int, action, *args, daemon=False) -> SimEvent:
        return self.schedule_at(self.now + int(delay), action, *args, daemon=daemon)

    def cancel(self, ev: SimEvent):
        if ev.canceled or ev.fired:
            return
        ev.canceled = True
        if not ev.daemon:
            self._live -= 1

    def request_hook(self):
        self._hook_requested = True

    @property
    def pending(self) -> int:
        """Number of live (non-daemon, not canceled) events."""
        return self._live

    @property
    def idle(self) -> bool:
        return self._live == 0 and not self._hook_requested

    def _drop_canceled(self):
        q = self._queue
        while q and q[0].canceled:
            heapq.heappop(q)

    def next_time(self) -> Optional[int]:
        self._drop_canceled()
        return self._queue[0].fire_time_ms if self._queue else None

    def step(self) -> bool:
        """Process one event, or the instant hook when the instant is exhausted."""
        self._drop_canceled()
        q = self._queue
        if self._hook_requested and (not q or q[0].fire_time_ms > self.now):
            self._hook_requested = False
            if self.hook is not None:
                self.hook()
            return True
        if not q:
            return False
        ev = heapq.heappop(q)
        self.now = ev.fire_time_ms
        ev.fired = True
        if not ev.daemon:
            self._live -= 1
        ev.action(*ev.args)
        return True

    def run_until_idle(self) -> int:
        while not self.idle:
            self.step()
        return self.now

    def advance_to(self, t: int) -> int:
        """Process everything up to and including ``t`` then move the clock to ``t``."""
        t = int(t)
        while True:
            nxt = self.next_time()
            if self._hook_requested or (nxt is not None and nxt <= t):
                self.step()
            else:
                break
        self.now = max(self.now, t)
        return self.now


class SimBackend(Backend):
    """SIM_BATCH / SIM_CLOUD adapter living on a shared :class:`Simulator`."""

    clock_kind = ClockKind.VIRTUAL

    def __init__(self, descriptor, listener, sim: Simulator):
        super().__init__(descriptor, listener)
        self.sim = sim
        params = descriptor.parameters
        self.rng = random.Random(int(params["seed"]))
        if descriptor.kind is BackendKind.SIM_BATCH:
            self.queue_wait: Distribution = params["queue_wait"]
            self.startup_ms = int(round(float(params["startup_overhead"]) * 1000))
        else:
            self.queue_wait = Distribution.constant(0)
            self.startup_ms = int(round(float(params["provision_delay"]) * 1000))
        self.resolution = max(1, int(params.get("clock_resolution", 1)))
        bw = params.get("bandwidth")
        self.bandwidth = float(bw) if bw else None
        self._inflight = {}

    @property
    def capacity(self):
        cap = self.descriptor.parameters.get("max_slots")
        return None if cap is None else int(cap)

    def draw_queue_wait_ms(self) -> int:
        ms = self.queue_wait.sample(self.rng) * 1000.0
        return int(round(ms / self.resolution)) * self.resolution

    def transfer_ms(self, size: int) -> int:
        if not self.bandwidth:
            return 0
        return int(math.ceil(size * 1000.0 / self.bandwidth))

    def _schedule(self, handle, delay, action, *args, daemon=False):
        ev = self.sim.schedule_in(delay, action, *args, daemon=daemon)
        handle.extra["events"].append(ev)
        if len(handle.extra["events"]) > 64:
            handle.extra["events"] = [e for e in handle.extra["events"] if not e.fired]
        return ev

    # -- pilots -----------------------------------------------------------
    def submit_pilot(self, pilot: Pilot) -> BackendHandle:
        self.check_capacity(pilot.description)
        handle = BackendHandle(self.backend_id, pilot.id, self.clock_kind, pilot.description.slots)
        handle.extra["events"] = []
        self.handles.append(handle)
        wait_ms = self.draw_queue_wait_ms()
        handle.extra["queue_wait_ms"] = wait_ms
        self._schedule(handle, wait_ms, self._startup, handle)
        self._schedule(handle, wait_ms + self.startup_ms, self._activate, handle)
        return handle

    def _startup(self, handle):
        self.listener.pilot_startup(handle.token)

    def _activate(self, handle):
        handle.active = True
        walltime_ms = int(round(self.listener.pilot_walltime(handle.token) * 1000))
        self._schedule(handle, walltime_ms, self._expire, handle, daemon=True)
        self.listener.pilot_activated(handle.token)

    def _expire(self, handle):
        handle.active = False
        self.listener.pilot_expired(handle.token)

    def cancel_pilot(self, handle: BackendHandle) -> None:
        handle.active = False
        handle.closed = True
        for ev in handle.extra.get("events", ()):
            self.sim.cancel(ev)
        handle.extra["events"] = []
        handle.busy.clear()
        for key in [k for k in self._inflight if k[1] == handle.token]:
            del self._inflight[key]

    # -- units ------------------------------------------------------------
    def launch_unit(self, handle: BackendHandle, unit: ComputeUnit, slots) -> None:
        if not handle.active:
            raise PilotNotActive(f"pilot {handle.token} is not active")
        for s in slots:
            if s in handle.busy:
                raise SlotOccupied(f"slot {s} of {handle.token} hosts {handle.busy[s]}")
        for s in slots:
            handle.busy[s] = unit.id
        self._schedule(handle, self.launch_overhead_ms, self._prepare, handle, unit)

    def _prepare(self, handle, unit):
        missing = self.listener.inputs_missing(unit.id)
        if missing is None:
            return
        for du in missing:
            key = (du, handle.token)
            if key in self._inflight:
                # another unit is already moving this data here; resume after it
                end = self._inflight[key]
                self._schedule(handle, end - self.sim.now, self._prepare, handle, unit)
                return
            size = self.listener.stage_begin(unit.id, du)
            delay = self.transfer_ms(size)
            self._inflight[key] = self.sim.now + delay
            self._schedule(handle, delay, self._stage_done, handle, unit, du)
            return
        self._start(handle, unit)

    def _stage_done(self, handle, unit, du):
        self._inflight.pop((du, handle.token), None)
        self.listener.stage_end(unit.id, du)
        self._prepare(handle, unit)

    def _start(self, handle, unit):
        from ..kernels import run_kernel

        ctx = self.listener.unit_started(unit.id, sim=self.sim)
        if ctx is None:
            return
        ctx.sim_complete = lambda: self._complete_deferred(handle, unit)
        code, message = run_kernel(ctx, simulated=True)
        if ctx.sim_deferred and code == 0:
            return
        duration = unit.description.kernel.sim_duration_ms()
        self._schedule(handle, duration, self._finish, handle, unit, code, message)

    def _complete_deferred(self, handle, unit):
        if unit.id in handle.busy.values():
            self._schedule(handle, 0, self._finish, handle, unit, 0, "")

    def _finish(self, handle, unit, code, message):
        self.release_slots(handle, unit.id)
        self.listener.unit_finished(unit.id, code, message)
