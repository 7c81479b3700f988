"""The pilot manager: pilot and unit submission, dependency tracking, late binding."""
from __future__ import annotations

import dataclasses
import itertools
import logging
import os
import tempfile
import threading
import time
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from .backend import BackendDescriptor, Simulator, create_backend
from .core import (BindingRecord, ComputeUnit, EntityType, EventLog, IdGenerator, Pilot,
                   PilotDescription, PilotState, UnitState, format_detail, transition)
from .data import DataManager, DataState
from .errors import (AlreadyTerminal, InvalidDescription, QueueFull, UnknownBackend,
                     UnknownDataUnit, UnknownEntity, WaitTimeout)
from .kernels import KernelContext
from .workload import WorkloadGraph

log = logging.getLogger(__name__)

FIFO = "FIFO"
AFFINITY_FIRST = "AFFINITY_FIRST"
POLICIES = (FIFO, AFFINITY_FIRST)


@dataclass(frozen=True)
class ManagerConfig:
    scheduling_policy: str = FIFO
    poll_interval_ms: int = 10
    max_queue_length: Optional[int] = None

    def __post_init__(self):
        if self.scheduling_policy not in POLICIES:
            raise InvalidDescription(f"unknown scheduling policy {self.scheduling_policy!r}")
        if self.poll_interval_ms is not None and self.poll_interval_ms < 1:
            raise InvalidDescription("poll_interval_ms must be >= 1")
        if self.max_queue_length is not None and self.max_queue_length < 0:
            raise InvalidDescription("max_queue_length must be >= 0")


def preferred_pilots(unit: ComputeUnit, order: Sequence[str],
                     holders: Callable[[str], Iterable[str]]) -> List[str]:
    """Pilots ``unit`` would like to run on, best first.

    An explicit affinity names a pilot or a data-unit (whose replica holders
    are preferred). Without one, pilots holding more of the unit's inputs win.
    """
    aff = unit.description.affinity
    if aff is not None:
        if aff in order:
            return [aff]
        held = set(holders(aff))
        return [p for p in order if p in held]
    counts: Dict[str, int] = {}
    for du in unit.description.input_data:
        for p in holders(du):
            counts[p] = counts.get(p, 0) + 1
    return sorted((p for p in order if counts.get(p)), key=lambda p: -counts[p])


def plan_bindings(candidates: Sequence[ComputeUnit], pilots: Sequence[Tuple[str, Sequence[int]]],
                  policy: str = FIFO, holders: Callable[[str], Iterable[str]] = lambda du: ()):
    """Decide bindings for eligible units; returns ``[(unit, pilot_id, slots)]``.

    ``candidates`` are in submission order and ``pilots`` in activation order
    with their free slot indices. Units take the lowest free slots. A unit
    that fits no pilot stops the pass: later units do not overtake it.
    """
    order = [pid for pid, _ in pilots]
    free = {pid: sorted(idx) for pid, idx in pilots}
    plan = []
    for unit in candidates:
        need = unit.description.slots_required
        target = None
        if policy == AFFINITY_FIRST:
            for pid in preferred_pilots(unit, order, holders):
                if len(free[pid]) >= need:
                    target = pid
                    break
        if target is None:
            target = next((pid for pid in order if len(free[pid]) >= need), None)
        if target is None:
            break
        slots = free[target][:need]
        del free[target][:need]
        plan.append((unit, target, slots))
    return plan


class PilotManager:
    """Accepts pilots and workloads and late-binds units to free pilot slots.

    All backends of one manager share a clock: either the wall clock (LOCAL)
    or one :class:`Simulator` (SIM_* kinds). In simulated mode nothing
    happens until ``wait``, ``run`` or ``run_until`` drives the simulator.
    """

    def __init__(self, backends: Iterable[BackendDescriptor] = (), config: Optional[ManagerConfig] = None,
                 work_dir: Optional[str] = None):
        self.config = config or ManagerConfig()
        descriptors = list(backends)
        if not descriptors:
            raise InvalidDescription("a manager needs at least one backend")
        kinds = {d.is_simulated for d in descriptors}
        if len(kinds) > 1:
            raise InvalidDescription("cannot mix LOCAL and simulated backends in one manager")
        self.simulated = kinds.pop()
        self.ids = IdGenerator()
        self._lock = threading.RLock()
        self._cond = threading.Condition(self._lock)
        if self.simulated:
            self.sim: Optional[Simulator] = Simulator(hook=self._on_instant_end)
            clock = lambda: self.sim.now  # noqa: E731
        else:
            self.sim = None
            t0 = time.monotonic()
            clock = lambda: int((time.monotonic() - t0) * 1000)  # noqa: E731
        self.now_ms = clock
        self.log = EventLog(clock)
        self.data = DataManager(self.log, self.ids)
        self._work_dir = work_dir
        self.backends = {}
        for d in descriptors:
            self.register_backend(d)
        self.pilots: Dict[str, Pilot] = {}
        self.units: Dict[str, ComputeUnit] = {}
        self.resources = {"brokers": {}}
        self._handles = {}
        self._slots: Dict[str, List[Optional[str]]] = {}
        self._pending: Dict[str, None] = {}
        self._seq = itertools.count()
        self._closed = False
        self._dirty = False
        self._thread = None
        if not self.simulated:
            self._thread = threading.Thread(target=self._poll_loop, daemon=True, name="pilotkit-scheduler")
            self._thread.start()

    # -- setup ----------------------------------------------------------------
    @property
    def work_dir(self) -> str:
        if self._work_dir is None:
            self._work_dir = tempfile.mkdtemp(prefix="pilotkit-")
        return self._work_dir

    def register_backend(self, descriptor: BackendDescriptor):
        if descriptor.is_simulated != self.simulated:
            raise InvalidDescription("backend clock kind differs from the manager's")
        with self._lock:
            if descriptor.backend_id in self.backends:
                raise InvalidDescription(f"backend {descriptor.backend_id!r} already registered")
            self.backends[descriptor.backend_id] = create_backend(descriptor, self, self.sim)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _check_open(self):
        if self._closed:
            raise RuntimeError("manager is closed")

    # -- bookkeeping helpers --------------------------------------------------
    def _new(self, etype, entity, **detail):
        rec = self.log.record(etype, entity.id, "NEW", format_detail(**detail))
        entity.state_history.append((entity.state, rec.timestamp_ms))

    def _advance(self, entity, label, **detail):
        new = transition(entity.state, label)
        etype = EntityType.PILOT if isinstance(entity, Pilot) else EntityType.UNIT
        rec = self.log.record(etype, entity.id, new.value, format_detail(**detail))
        entity.state = new
        entity.state_history.append((new, rec.timestamp_ms))
        return rec

    def _request_schedule(self):
        if self.sim is not None:
            self.sim.request_hook()
        else:
            self._dirty = True
            self._cond.notify_all()

    def _on_instant_end(self):
        with self._lock:
            self._schedule_pass()

    def _poll_loop(self):
        interval = self.config.poll_interval_ms / 1000.0
        with self._cond:
            while not self._closed:
                if not self._dirty:
                    self._cond.wait(interval)
                self._dirty = False
                if not self._closed:
                    self._schedule_pass()

    def _pilot_root(self, pilot: Pilot) -> str:
        return os.path.join(pilot.description.work_dir or self.work_dir, pilot.id)

    def get(self, entity_id: str):
        if entity_id in self.units:
            return self.units[entity_id]
        if entity_id in self.pilots:
            return self.pilots[entity_id]
        raise UnknownEntity(entity_id)

    def state(self, entity_id: str):
        return self.get(entity_id).state

    # -- pilots ---------------------------------------------------------------
    def submit_pilot(self, desc: PilotDescription) -> str:
        with self._lock:
            self._check_open()
            backend = self.backends.get(desc.backend_id)
            if backend is None:
                raise UnknownBackend(desc.backend_id)
            backend.check_capacity(desc)
            pilot = Pilot(self.ids.next("pilot"), desc)
            self.pilots[pilot.id] = pilot
            self._new(EntityType.PILOT, pilot, backend=desc.backend_id, slots=desc.slots,
                      queue=desc.queue_name)
            self._advance(pilot, "submit")
            self._handles[pilot.id] = backend.submit_pilot(pilot)
            self._slots[pilot.id] = [None] * desc.slots
            self._advance(pilot, "queue")
            return pilot.id

    add_pilot_at_runtime = submit_pilot

    def cancel_pilot(self, pilot_id: str):
        with self._lock:
            pilot = self.pilots.get(pilot_id)
            if pilot is None:
                raise UnknownEntity(pilot_id)
            if pilot.terminal:
                raise AlreadyTerminal(f"pilot {pilot_id} is {pilot.state.value}")
            self._terminate_pilot(pilot, "cancel", "cancel", reason="canceled")

    def _terminate_pilot(self, pilot: Pilot, label: str, running_label: str, reason: str):
        for unit in sorted(self.units.values(), key=lambda u: u.submit_seq):
            if unit.binding is None or unit.binding.pilot_id != pilot.id:
                continue
            if unit.state is UnitState.RUNNING:
                lbl = running_label
            elif unit.state is UnitState.BOUND:
                lbl = "cancel"
            else:
                continue
            self._release(unit)
            if lbl == "fail":
                unit.exit_info = (-1, reason)
                self._advance(unit, "fail", exit=-1, msg=reason)
            else:
                self._advance(unit, "cancel", reason=reason)
                unit.binding = None
            if unit.description.output_data:
                self.data.fail(unit.description.output_data, reason)
        self._advance(pilot, label, reason=reason)
        self.backends[pilot.description.backend_id].cancel_pilot(self._handles[pilot.id])
        self.data.drop_store(pilot.id)
        self._request_schedule()
        self._cond.notify_all()

    # backend callbacks --------------------------------------------------------
    def pilot_walltime(self, pilot_id: str) -> float:
        return float(self.pilots[pilot_id].description.walltime_limit)

    def pilot_startup(self, pilot_id: str):
        with self._lock:
            pilot = self.pilots[pilot_id]
            if pilot.state is PilotState.QUEUED:
                self.log.record(EntityType.PILOT, pilot_id, "STARTUP")

    def pilot_activated(self, pilot_id: str):
        with self._lock:
            pilot = self.pilots[pilot_id]
            if pilot.state is not PilotState.QUEUED or self._closed:
                return
            self._advance(pilot, "activate")
            params = self.backends[pilot.description.backend_id].descriptor.parameters
            cap = params.get("store_capacity_bytes")
            self.data.add_store(pilot_id, os.path.join(self._pilot_root(pilot), "store"),
                                None if cap is None else int(cap))
            self._request_schedule()
            self._cond.notify_all()

    def pilot_expired(self, pilot_id: str):
        with self._lock:
            pilot = self.pilots[pilot_id]
            if pilot.state is PilotState.ACTIVE:
                self._terminate_pilot(pilot, "complete", "fail", reason="walltime exceeded")

    def _bound_pilot(self, unit_id):
        unit = self.units[unit_id]
        if unit.state is not UnitState.BOUND:
            return unit, None
        return unit, unit.binding.pilot_id

    def inputs_missing(self, unit_id: str):
        with self._lock:
            unit, pid = self._bound_pilot(unit_id)
            if pid is None:
                return None
            return [du for du in unit.description.input_data if not self.data.has_replica(du, pid)]

    def stage_begin(self, unit_id: str, du_id: str) -> int:
        with self._lock:
            _, pid = self._bound_pilot(unit_id)
            return self.data.begin_stage(du_id, pid, unit_id)

    def stage_end(self, unit_id: str, du_id: str):
        with self._lock:
            pid = self.units[unit_id].binding.pilot_id if self.units[unit_id].binding else None
            if pid is not None and pid in self.data.stores:
                self.data.end_stage(du_id, pid, unit_id)

    def stage(self, unit_id: str, du_id: str):
        with self._lock:
            _, pid = self._bound_pilot(unit_id)
        if pid is not None:
            self.data.stage(du_id, pid, unit_id)

    def unit_started(self, unit_id: str, sim=None, cancel=None, register_process=None):
        with self._lock:
            unit, pid = self._bound_pilot(unit_id)
            if pid is None:
                return None
            desc = unit.description
            self._advance(unit, "run")
            inputs = {du: self.data.replica_path(du, pid) for du in desc.input_data}
            out = self.data.output_dir(desc.output_data, pid) if desc.output_data else None
            work = os.path.join(self._pilot_root(self.pilots[pid]), "units", unit_id)
            return KernelContext(
                unit_id=unit_id, kernel=desc.kernel, arguments=desc.arguments, inputs=inputs,
                output_dir=out, work_dir=work, sim=sim, cancel=cancel or threading.Event(),
                resources=self.resources, register_process=register_process)

    def unit_finished(self, unit_id: str, exit_code: int, message: str = ""):
        with self._lock:
            unit = self.units[unit_id]
            out = unit.description.output_data
            if unit.state is UnitState.BOUND and exit_code != 0:
                # failed before it could start (staging); it never ran
                self._release(unit)
                self._advance(unit, "cancel", reason=message or "launch failed")
                unit.binding = None
                if out:
                    self.data.fail(out, "producer canceled")
            elif unit.state is UnitState.RUNNING:
                self._release(unit)
                unit.exit_info = (int(exit_code), message)
                if exit_code == 0:
                    self._advance(unit, "complete", exit=0)
                    if out:
                        self.data.complete_output(out, unit.binding.pilot_id)
                else:
                    self._advance(unit, "fail", exit=exit_code, msg=message)
                    if out:
                        self.data.fail(out, "producer failed")
            else:
                return
            self._request_schedule()
            self._cond.notify_all()

    def _release(self, unit: ComputeUnit):
        b = unit.binding
        slots = self._slots[b.pilot_id]
        for s in b.slots:
            if slots[s] == unit.id:
                slots[s] = None
        self.pilots[b.pilot_id].capacity_free += len(b.slots)

    # -- data -----------------------------------------------------------------
    def register_data(self, desc, name: str = "") -> str:
        """Register a data-unit outside any workload; returns its id."""
        with self._lock:
            self._check_open()
            du = self.data.register(desc, name)
            self._request_schedule()
            return du

    # -- units ----------------------------------------------------------------
    def submit_units(self, graph: WorkloadGraph) -> List[str]:
        with self._lock:
            self._check_open()
            graph.check_acyclic()
            outputs = graph.outputs()
            for name, desc in graph.units.items():
                for dep in desc.depends_on:
                    if dep not in graph.units and dep not in self.units:
                        raise InvalidDescription(f"unit {name!r} depends on unknown unit {dep!r}")
                for du in desc.input_data:
                    if du not in graph.data and du not in outputs and du not in self.data.units:
                        raise UnknownDataUnit(f"unit {name!r} reads unknown data-unit {du!r}")
            limit = self.config.max_queue_length
            if limit is not None and len(self._pending) + len(graph) > limit:
                raise QueueFull(f"{len(self._pending)} pending + {len(graph)} new > {limit}")
            du_ids = {name: self.data.register(d, name) for name, d in graph.data.items()}
            for name in outputs:
                du_ids[name] = self.data.declare_output(name)
            uid_of = {name: self.ids.next("unit") for name in graph.units}
            now = self.now_ms()
            ids = []
            for name, d in graph.units.items():
                desc = dataclasses.replace(
                    d,
                    depends_on=frozenset(uid_of.get(x, x) for x in d.depends_on),
                    input_data=tuple(du_ids.get(x, x) for x in d.input_data),
                    output_data=du_ids.get(d.output_data, d.output_data),
                    affinity=du_ids.get(d.affinity, d.affinity),
                )
                unit = ComputeUnit(uid_of[name], desc, name=name, submit_seq=next(self._seq),
                                   release_at=now + int(graph.release_ms.get(name, 0)))
                self.units[unit.id] = unit
                self._new(EntityType.UNIT, unit, name=name, kernel=desc.kernel.label,
                          slots=desc.slots_required, deps=sorted(desc.depends_on),
                          inputs=desc.input_data, output=desc.output_data, affinity=desc.affinity)
                self._advance(unit, "submit")
                self._pending[unit.id] = None
                if self.sim is not None and unit.release_at > now:
                    self.sim.schedule_at(unit.release_at, self._request_schedule)
                ids.append(unit.id)
            self._request_schedule()
            return ids

    def _doomed(self, unit: ComputeUnit) -> Optional[str]:
        for dep in sorted(unit.description.depends_on):
            state = self.units[dep].state
            if state in (UnitState.FAILED, UnitState.CANCELED):
                return f"dependency {dep} {state.value}"
        for du in unit.description.input_data:
            if self.data.state(du) is DataState.FAILED:
                return f"input {du} FAILED"
        return None

    def _eligible(self, unit: ComputeUnit, now: int) -> bool:
        if unit.release_at > now:
            return False
        for dep in unit.description.depends_on:
            if self.units[dep].state is not UnitState.DONE:
                return False
        for du in unit.description.input_data:
            if self.data.state(du) is not DataState.AVAILABLE:
                return False
        return True

    def _active_pilots(self):
        active = [p for p in self.pilots.values() if p.state is PilotState.ACTIVE]
        active.sort(key=lambda p: (p.timestamp(PilotState.ACTIVE), p.id))
        return active

    def schedule_step(self) -> List[BindingRecord]:
        """Run one binding pass now; returns the bindings made."""
        with self._lock:
            return self._schedule_pass()

    def _schedule_pass(self) -> List[BindingRecord]:
        if self._closed:
            return []
        changed = True
        while changed:
            changed = False
            for uid in list(self._pending):
                unit = self.units[uid]
                if unit.state is not UnitState.PENDING:
                    del self._pending[uid]
                    continue
                reason = self._doomed(unit)
                if reason:
                    self._advance(unit, "cancel", reason=reason)
                    if unit.description.output_data:
                        self.data.fail(unit.description.output_data, "producer canceled")
                    del self._pending[uid]
                    changed = True
        active = self._active_pilots()
        if not active or not self._pending:
            self._cond.notify_all()
            return []
        now = self.now_ms()
        candidates = [self.units[u] for u in self._pending if self._eligible(self.units[u], now)]
        free = [(p.id, [i for i, owner in enumerate(self._slots[p.id]) if owner is None])
                for p in active]
        plan = plan_bindings(candidates, free, self.config.scheduling_policy, self.data.holders)
        bindings = []
        for unit, pid, slots in plan:
            rec = self._advance(unit, "bind", pilot=pid, slot=slots)
            unit.binding = BindingRecord(unit.id, pid, slots[0], rec.timestamp_ms, tuple(slots))
            for s in slots:
                self._slots[pid][s] = unit.id
            self.pilots[pid].capacity_free -= len(slots)
            del self._pending[unit.id]
            bindings.append(unit.binding)
        for b in bindings:
            pilot = self.pilots[b.pilot_id]
            backend = self.backends[pilot.description.backend_id]
            backend.launch_unit(self._handles[b.pilot_id], self.units[b.unit_id], b.slots)
        self._cond.notify_all()
        return bindings

    # -- driving & waiting ----------------------------------------------------
    def run(self) -> int:
        """Simulated mode: process events until idle; returns the virtual time."""
        if self.sim is None:
            raise RuntimeError("run() drives simulated managers only; use wait()")
        with self._lock:
            return self.sim.run_until_idle()

    def run_until(self, t_ms: int) -> int:
        if self.sim is None:
            raise RuntimeError("run_until() drives simulated managers only")
        with self._lock:
            return self.sim.advance_to(t_ms)

    def wait(self, ids: Optional[Iterable[str]] = None, timeout: Optional[float] = None):
        """Block until every id is terminal; returns ``{id: state}``.

        ``timeout`` is in seconds (virtual seconds for simulated managers).
        Raises :class:`WaitTimeout` carrying the partial map on timeout, or
        when a simulation runs dry before all ids finish.
        """
        with self._lock:
            ids = list(self.units) if ids is None else list(ids)
            entities = [self.get(i) for i in ids]

            def done():
                return all(e.terminal for e in entities)

            if self.sim is not None:
                sim = self.sim
                deadline = None if timeout is None else sim.now + int(round(timeout * 1000))
                while not done() and not sim.idle:
                    nxt = sim.next_time()
                    if deadline is not None and not sim._hook_requested and (nxt is None or nxt > deadline):
                        sim.advance_to(deadline)
                        break
                    sim.step()
            else:
                deadline = None if timeout is None else time.monotonic() + timeout
                while not done():
                    if deadline is None:
                        self._cond.wait(0.1)
                        continue
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        break
                    self._cond.wait(remaining)
            result = {i: e.state for i, e in zip(ids, entities) if e.terminal}
            if len(result) != len(ids):
                missing = [i for i in ids if i not in result]
                raise WaitTimeout(f"{len(missing)} of {len(ids)} not terminal: {missing[:5]}", result)
            return result

    def close(self):
        """Finish every live pilot (ACTIVE -> DONE, waiting ones canceled), cancel the backlog and stop."""
        with self._lock:
            if self._closed:
                return
            for pilot in list(self.pilots.values()):
                if pilot.state is PilotState.ACTIVE:
                    self._terminate_pilot(pilot, "complete", "cancel", reason="manager closed")
                elif not pilot.terminal:
                    self._terminate_pilot(pilot, "cancel", "cancel", reason="manager closed")
            for uid in list(self._pending):
                unit = self.units[uid]
                if unit.state is UnitState.PENDING:
                    self._advance(unit, "cancel", reason="manager closed")
                    if unit.description.output_data:
                        self.data.fail(unit.description.output_data, "producer canceled")
            self._pending.clear()
            self._closed = True
            self._cond.notify_all()
        if self._thread is not None:
            self._thread.join(timeout=5)
        for backend in self.backends.values():
            backend.shutdown()
