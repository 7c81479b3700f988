import pytest

from pilotkit import ComputeUnitDescription, DataUnitDescription, KernelSpec
from pilotkit.core import parse_csv
from pilotkit.validate import validate_records

from helpers import sim_manager, sleep_graph

HEADER = "timestamp_ms,entity_type,entity_id,event,detail\n"
PILOT = """0,PILOT,p1,NEW,backend=sim;slots=1
0,PILOT,p1,SUBMITTED,
0,PILOT,p1,QUEUED,
0,PILOT,p1,STARTUP,
0,PILOT,p1,ACTIVE,
"""


def check(body: str):
    return validate_records(parse_csv(HEADER + body))


def rules(body: str):
    return sorted({v.rule for v in check(body)})


def test_generated_logs_are_clean():
    mgr = sim_manager(pilots=[2, 1], policy="AFFINITY_FIRST", queue_wait=1, bandwidth=1000)
    du = mgr.register_data(DataUnitDescription.inline(b"x" * 100))
    g = sleep_graph([1, 2, 1, 1], deps={3: [0, 1]})
    g.units["u2"] = ComputeUnitDescription(KernelSpec.builtin("sleep", duration=1), input_data=(du,))
    mgr.submit_units(g)
    mgr.run()
    mgr.close()
    assert validate_records(mgr.log.records) == []


def test_clean_hand_written_log():
    assert check(PILOT + """0,UNIT,u1,NEW,slots=1
0,UNIT,u1,PENDING,
0,UNIT,u1,BOUND,pilot=p1;slot=0
0,UNIT,u1,RUNNING,
5,UNIT,u1,DONE,exit=0
6,PILOT,p1,DONE,
""") == []


def test_running_before_bound_names_the_unit():
    [v] = check(PILOT + """0,UNIT,u7,NEW,slots=1
0,UNIT,u7,PENDING,
1,UNIT,u7,RUNNING,
""")
    assert v.entity_id == "u7" and v.rule == "lifecycle" and "u7" in str(v)


def test_non_monotonic_timestamps():
    assert "monotonic" in rules(PILOT + """5,UNIT,u1,NEW,slots=1
3,UNIT,u1,PENDING,
""")


def test_binding_to_inactive_pilot():
    body = """0,PILOT,p1,NEW,backend=sim;slots=1
0,PILOT,p1,SUBMITTED,
0,PILOT,p1,QUEUED,
0,UNIT,u1,NEW,slots=1
0,UNIT,u1,PENDING,
0,UNIT,u1,BOUND,pilot=p1;slot=0
"""
    assert rules(body) == ["late-binding"]
    assert rules(PILOT + "0,UNIT,u1,NEW,slots=1\n0,UNIT,u1,PENDING,\n0,UNIT,u1,BOUND,pilot=p9;slot=0\n") == ["late-binding"]


@pytest.mark.parametrize("bind", ["pilot=p1;slot=1", "pilot=p1;slot=0|1"])
def test_capacity_violations(bind):
    assert "capacity" in rules(PILOT + f"0,UNIT,u1,NEW,slots=1\n0,UNIT,u1,PENDING,\n0,UNIT,u1,BOUND,{bind}\n")


def test_double_booked_slot():
    body = PILOT + """0,UNIT,u1,NEW,slots=1
0,UNIT,u2,NEW,slots=1
0,UNIT,u1,PENDING,
0,UNIT,u2,PENDING,
0,UNIT,u1,BOUND,pilot=p1;slot=0
0,UNIT,u2,BOUND,pilot=p1;slot=0
"""
    assert rules(body) == ["capacity"]


def test_pilot_ending_while_hosting():
    body = PILOT + "0,UNIT,u1,NEW,slots=1\n0,UNIT,u1,PENDING,\n0,UNIT,u1,BOUND,pilot=p1;slot=0\n1,PILOT,p1,DONE,\n"
    assert rules(body) == ["capacity"]


def test_dependency_order():
    body = PILOT + """0,UNIT,a,NEW,slots=1
0,UNIT,b,NEW,slots=1;deps=a
0,UNIT,a,PENDING,
0,UNIT,b,PENDING,
0,UNIT,b,BOUND,pilot=p1;slot=0
0,UNIT,b,RUNNING,
"""
    [v] = check(body)
    assert (v.rule, v.entity_id) == ("dependency", "b")


def test_locality():
    body = PILOT + """0,DATA_UNIT,d1,NEW,
0,UNIT,u1,NEW,slots=1;inputs=d1
0,UNIT,u1,PENDING,
0,UNIT,u1,BOUND,pilot=p1;slot=0
0,UNIT,u1,RUNNING,
"""
    assert rules(body) == ["locality"]
    fixed = body.replace("0,UNIT,u1,RUNNING,", "0,DATA_UNIT,d1,AVAILABLE,pilot=p1\n0,UNIT,u1,RUNNING,")
    assert check(fixed) == []


def test_illegal_transition_and_unknown_events():
    body = PILOT + """0,UNIT,u1,NEW,slots=1
0,UNIT,u1,PENDING,
0,UNIT,u1,DONE,
0,UNIT,u1,EXPLODED,
0,UNIT,u9,PENDING,
"""
    msgs = [str(v) for v in check(body)]
    assert len(msgs) == 3
    assert any("PENDING -> DONE" in m for m in msgs)
