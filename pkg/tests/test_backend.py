import random
import sys
import time

import pytest

from pilotkit import BackendDescriptor, PilotDescription, PilotManager, PilotState, UnitState
from pilotkit.backend.sim import Simulator
from pilotkit.core import EntityType, KernelSpec, ComputeUnitDescription
from pilotkit.dists import Distribution
from pilotkit.errors import AlreadyTerminal, CapacityExceeded, InvalidDescription, UnknownBackend
from pilotkit.workload import WorkloadGraph

from helpers import events, sim_backend, sim_manager, sleep_graph, sleep_unit, ts


def local_manager(max_processes=4, **params):
    return PilotManager([BackendDescriptor("loc", "LOCAL", {"max_processes": max_processes, **params})])


# -- descriptors ---------------------------------------------------------------

@pytest.mark.parametrize("kind,params", [
    ("SIM_BATCH", {"queue_wait": 0, "startup_overhead": 0}),        # no seed
    ("SIM_BATCH", {"startup_overhead": 0, "seed": 1}),              # no queue_wait
    ("SIM_CLOUD", {"seed": 1}),
    ("LOCAL", {}),
    ("LOCAL", {"max_processes": 0}),
    ("SIM_BATCH", {"queue_wait": 0, "startup_overhead": -1, "seed": 1}),
    ("SIM_BATCH", {"queue_wait": 0, "startup_overhead": {"dist": "EXP", "mean": 1}, "seed": 1}),
    ("SIM_BATCH", {"queue_wait": {"dist": "UNIFORM", "low": 5, "high": -1}, "startup_overhead": 0, "seed": 1}),
])
def test_backend_descriptor_validation(kind, params):
    with pytest.raises(InvalidDescription):
        BackendDescriptor("b", kind, params)


def test_descriptor_round_trip():
    d = sim_backend(queue_wait={"dist": "UNIFORM", "low": 5, "high": 15}, startup=2, bandwidth=1000)
    assert BackendDescriptor.from_dict(d.to_dict()) == d


# -- pilots --------------------------------------------------------------------

def test_constant_queue_wait_and_startup():
    mgr = sim_manager(queue_wait=10, startup=2)
    mgr.run()
    pid = "pilot-000001"
    assert ts(mgr, pid, "SUBMITTED", EntityType.PILOT) == 0
    assert ts(mgr, pid, "QUEUED", EntityType.PILOT) == 0
    assert ts(mgr, pid, "STARTUP", EntityType.PILOT) == 10_000
    assert ts(mgr, pid, "ACTIVE", EntityType.PILOT) == 12_000


def test_uniform_queue_wait_matches_seeded_draws():
    n = 1000
    mgr = sim_manager(pilots=[1] * n, queue_wait={"dist": "UNIFORM", "low": 5, "high": 15}, seed=42)
    mgr.run()
    waits = [ts(mgr, p, "STARTUP", EntityType.PILOT) - ts(mgr, p, "SUBMITTED", EntityType.PILOT)
             for p in mgr.pilots]
    # Monte-Carlo oracle: the same generator, seeded the same way, drawn in submission order
    rng = random.Random(42)
    expected = [int(round(rng.uniform(5, 15) * 1000)) for _ in range(n)]
    assert waits == expected
    assert abs(sum(waits) / n - 10_000) <= 0.05 * 10_000


def test_exp_queue_wait_is_seed_deterministic():
    def waits(seed):
        mgr = sim_manager(pilots=[1] * 20, queue_wait={"dist": "EXP", "mean": 3}, seed=seed)
        mgr.run()
        return [ts(mgr, p, "ACTIVE", EntityType.PILOT) for p in mgr.pilots]
    assert waits(5) == waits(5)
    assert waits(5) != waits(6)


def test_clock_resolution_rounds_queue_wait():
    mgr = sim_manager(queue_wait={"dist": "UNIFORM", "low": 0, "high": 10}, clock_resolution=100, seed=3)
    mgr.run()
    assert ts(mgr, "pilot-000001", "ACTIVE", EntityType.PILOT) % 100 == 0


def test_sim_cloud_provision_delay():
    bd = BackendDescriptor("c", "SIM_CLOUD", {"provision_delay": 1.5, "seed": 0})
    mgr = PilotManager([bd])
    mgr.submit_pilot(PilotDescription("c", slots=1))
    mgr.run()
    assert ts(mgr, "pilot-000001", "ACTIVE", EntityType.PILOT) == 1500


def test_local_capacity_exceeded():
    mgr = local_manager(max_processes=4)
    try:
        with pytest.raises(CapacityExceeded):
            mgr.submit_pilot(PilotDescription("loc", slots=8))
    finally:
        mgr.close()


def test_sim_max_slots_capacity():
    mgr = sim_manager(pilots=[], max_slots=2)
    with pytest.raises(CapacityExceeded):
        mgr.submit_pilot(PilotDescription("sim", slots=3))


def test_unknown_backend():
    mgr = sim_manager(pilots=[])
    with pytest.raises(UnknownBackend):
        mgr.submit_pilot(PilotDescription("nope"))


def test_mixed_clock_kinds_rejected():
    with pytest.raises(InvalidDescription):
        PilotManager([sim_backend(), BackendDescriptor("loc", "LOCAL", {"max_processes": 1})])


# -- units ---------------------------------------------------------------------

def test_zero_duration_sleep_has_zero_span():
    mgr = sim_manager()
    [uid] = mgr.submit_units(sleep_graph([0]))
    mgr.run()
    assert mgr.state(uid) is UnitState.DONE
    assert ts(mgr, uid, "DONE") - ts(mgr, uid, "RUNNING") == 0


def test_three_serial_sleeps():
    mgr = sim_manager()
    ids = mgr.submit_units(sleep_graph([1, 1, 1]))
    assert mgr.run() == 3000
    assert [ts(mgr, u, "DONE") for u in ids] == [1000, 2000, 3000]


def test_empty_simulator_returns_current_time():
    assert Simulator().run_until_idle() == 0
    assert sim_manager(pilots=[]).run() == 0


def test_simulator_orders_by_time_then_sequence():
    sim = Simulator()
    seen = []
    for t, tag in [(5, "a"), (1, "b"), (5, "c"), (1, "d")]:
        sim.schedule_at(t, seen.append, tag)
    sim.run_until_idle()
    assert seen == ["b", "d", "a", "c"]


def test_daemon_events_do_not_keep_simulation_alive():
    sim = Simulator()
    fired = []
    sim.schedule_at(10, fired.append, "daemon", daemon=True)
    assert sim.run_until_idle() == 0 and fired == []


def test_launch_overhead_is_bind_to_run_gap():
    mgr = sim_manager(launch_overhead=0.25)
    [uid] = mgr.submit_units(sleep_graph([1]))
    mgr.run()
    assert ts(mgr, uid, "RUNNING") - ts(mgr, uid, "BOUND") == 250
    assert ts(mgr, uid, "DONE") == 1250


def test_sim_runs_are_byte_identical():
    def run():
        mgr = sim_manager(pilots=[2, 1], queue_wait={"dist": "EXP", "mean": 2}, seed=9)
        mgr.submit_units(sleep_graph([1, 2, 3, 1, 2], deps={3: [0], 4: [1, 2]}))
        mgr.run()
        return mgr.log.to_csv()
    assert run() == run()


def test_walltime_expiry_fails_running_units():
    backend = sim_backend()
    mgr = PilotManager([backend])
    pid = mgr.submit_pilot(PilotDescription("sim", slots=1, walltime_limit=1.5))
    ids = mgr.submit_units(sleep_graph([1, 1, 1]))
    mgr.run()
    assert [mgr.state(u) for u in ids] == [UnitState.DONE, UnitState.FAILED, UnitState.PENDING]
    assert mgr.units[ids[1]].exit_info[0] == -1
    assert mgr.state(pid) is PilotState.DONE
    assert ts(mgr, pid, "DONE", EntityType.PILOT) == 1500


# -- cancellation --------------------------------------------------------------

def test_cancel_queued_pilot_affects_no_units():
    mgr = sim_manager(queue_wait=10)
    mgr.run_until(1000)
    pid = "pilot-000001"
    assert mgr.state(pid) is PilotState.QUEUED
    mgr.cancel_pilot(pid)
    assert mgr.state(pid) is PilotState.CANCELED
    assert events(mgr, EntityType.UNIT, "CANCELED") == []


def test_cancel_active_pilot_with_running_and_bound_units():
    mgr = sim_manager(pilots=[5], launch_overhead=1)
    first = mgr.submit_units(sleep_graph([10, 10], prefix="a"))
    mgr.run_until(1500)
    second = mgr.submit_units(sleep_graph([10, 10, 10], prefix="b"))
    mgr.run_until(2000)
    assert [mgr.state(u) for u in first] == [UnitState.RUNNING] * 2
    assert [mgr.state(u) for u in second] == [UnitState.BOUND] * 3
    mgr.cancel_pilot("pilot-000001")
    canceled = events(mgr, EntityType.UNIT, "CANCELED")
    assert len(canceled) == 5
    assert mgr.wait(first + second) == {u: UnitState.CANCELED for u in first + second}
    assert all(mgr.units[u].binding is None for u in first + second)


def test_cancel_done_pilot_raises():
    mgr = sim_manager()
    mgr.run()
    mgr.close()
    with pytest.raises(AlreadyTerminal):
        mgr.cancel_pilot("pilot-000001")


# -- LOCAL ---------------------------------------------------------------------

def test_local_external_failure_reports_exit_code():
    with local_manager() as mgr:
        mgr.submit_pilot(PilotDescription("loc", slots=1))
        g = WorkloadGraph()
        g.add("bad", ComputeUnitDescription(KernelSpec.external([sys.executable, "-c", "import sys; sys.exit(1)"])))
        g.add("good", ComputeUnitDescription(KernelSpec.external([sys.executable, "-c", "pass"])))
        bad, good = mgr.submit_units(g)
        states = mgr.wait(timeout=30)
        assert states[bad] is UnitState.FAILED and mgr.units[bad].exit_info[0] == 1
        assert states[good] is UnitState.DONE


def test_local_builtin_sleep_runs_concurrently():
    with local_manager() as mgr:
        mgr.submit_pilot(PilotDescription("loc", slots=2))
        t0 = time.monotonic()
        ids = mgr.submit_units(sleep_graph([0.3, 0.3]))
        assert set(mgr.wait(ids, timeout=10).values()) == {UnitState.DONE}
        assert time.monotonic() - t0 < 0.55
        for r in events(mgr, EntityType.UNIT, "BOUND"):
            assert r.timestamp_ms >= ts(mgr, "pilot-000001", "ACTIVE", EntityType.PILOT)


def test_local_cancel_terminates_external_process():
    with local_manager() as mgr:
        pid = mgr.submit_pilot(PilotDescription("loc", slots=1))
        g = WorkloadGraph()
        g.add("long", ComputeUnitDescription(KernelSpec.external([sys.executable, "-c", "import time; time.sleep(30)"])))
        [uid] = mgr.submit_units(g)
        deadline = time.monotonic() + 10
        while mgr.state(uid) is not UnitState.RUNNING and time.monotonic() < deadline:
            time.sleep(0.01)
        t0 = time.monotonic()
        mgr.cancel_pilot(pid)
        assert mgr.wait([uid], timeout=5) == {uid: UnitState.CANCELED}
        assert time.monotonic() - t0 < 5


def test_local_sleep_zero_and_distribution_parse():
    with local_manager() as mgr:
        mgr.submit_pilot(PilotDescription("loc", slots=1))
        [uid] = mgr.submit_units(WorkloadGraph(units={"z": sleep_unit(0)}))
        assert mgr.wait([uid], timeout=10) == {uid: UnitState.DONE}
    assert Distribution.parse(3) == Distribution.constant(3)
