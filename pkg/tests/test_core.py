import itertools
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pilotkit.core import (PILOT_EVENTS, UNIT_EVENTS, ComputeUnit, ComputeUnitDescription, EntityType,
                           EventLog, EventRecord, IdGenerator, KernelSpec, Pilot, PilotDescription,
                           PilotState, UnitState, format_detail, is_terminal, parse_csv, parse_detail,
                           records_to_csv, successors, transition)
from pilotkit.errors import ClockRegression, IllegalTransition, InvalidDescription, MalformedLog

from oracles import PILOT_TABLE, UNIT_TABLE


def test_first_pilot_transition():
    assert transition(PilotState.NEW, "submit") is PilotState.SUBMITTED


def test_terminal_unit_cannot_run():
    with pytest.raises(IllegalTransition):
        transition(UnitState.DONE, "run")


@pytest.mark.parametrize("states,events,table", [
    (PilotState, PILOT_EVENTS, PILOT_TABLE),
    (UnitState, UNIT_EVENTS, UNIT_TABLE),
])
def test_transition_cross_product_matches_table(states, events, table):
    for state, event in itertools.product(states, events):
        expected = table.get((state.value, event))
        if expected is None:
            with pytest.raises(IllegalTransition):
                transition(state, event)
        else:
            assert transition(state, event).value == expected


def test_terminal_states_have_no_successors():
    for state in list(PilotState) + list(UnitState):
        if is_terminal(state):
            assert successors(state) == frozenset()
        else:
            assert successors(state)


def test_lifecycle_history_and_state_agree():
    pilot = Pilot("pilot-000001", PilotDescription("b", slots=2))
    for t, ev in enumerate(("submit", "queue", "activate", "complete")):
        pilot.advance(ev, t * 10)
    assert pilot.state is PilotState.DONE
    assert pilot.state_history[-1][0] is PilotState.DONE
    assert [ts for _, ts in pilot.state_history] == sorted(ts for _, ts in pilot.state_history)
    assert pilot.terminal
    with pytest.raises(IllegalTransition):
        pilot.advance("cancel", 50)


def test_lifecycle_rejects_time_going_backwards():
    unit = ComputeUnit("unit-000001", ComputeUnitDescription(KernelSpec.builtin("noop")))
    unit.advance("submit", 100)
    with pytest.raises(ClockRegression):
        unit.advance("bind", 90)


@pytest.mark.parametrize("bad", [
    lambda: PilotDescription("b", slots=0),
    lambda: PilotDescription("b", walltime_limit=0),
    lambda: ComputeUnitDescription(KernelSpec.builtin("noop"), slots_required=0),
    lambda: KernelSpec.builtin("not_a_kernel"),
    lambda: KernelSpec.external([]),
    lambda: KernelSpec("SOMETHING"),
])
def test_description_invariants(bad):
    with pytest.raises(InvalidDescription):
        bad()


def test_sim_duration_from_duration_parameter():
    assert KernelSpec.builtin("sleep", duration=1.5).sim_duration_ms() == 1500
    assert KernelSpec.builtin("sleep", duration=1, sim_duration_ms=7).sim_duration_ms() == 7
    assert KernelSpec.builtin("noop").sim_duration_ms() == 0


def test_ids_are_sequential_per_prefix():
    ids = IdGenerator()
    assert [ids.next("unit"), ids.next("unit"), ids.next("pilot")] == \
        ["unit-000001", "unit-000002", "pilot-000001"]


def test_single_append_is_readable():
    log = EventLog()
    rec = EventRecord(100, EntityType.PILOT, "p1", "ACTIVE")
    assert log.append(rec) == 0
    assert log.records == [rec]


def test_regression_within_entity_raises():
    log = EventLog()
    log.append(EventRecord(100, EntityType.UNIT, "u", "PENDING"))
    with pytest.raises(ClockRegression):
        log.append(EventRecord(90, EntityType.UNIT, "u", "BOUND"))
    # equal timestamps and other entities are fine
    log.append(EventRecord(100, EntityType.UNIT, "u", "BOUND"))
    log.append(EventRecord(5, EntityType.UNIT, "v", "PENDING"))
    assert len(log) == 3


def test_concurrent_appends_keep_count_and_order():
    log = EventLog()
    n_threads, per_thread = 8, 125
    barrier = threading.Barrier(n_threads)

    def producer(tid):
        barrier.wait()
        for i in range(per_thread):
            log.append(EventRecord(i, EntityType.UNIT, f"u{tid}", f"E{i}"))

    threads = [threading.Thread(target=producer, args=(t,)) for t in range(n_threads)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    records = log.records
    assert len(records) == n_threads * per_thread
    for tid in range(n_threads):
        mine = [r.event for r in records if r.entity_id == f"u{tid}"]
        assert mine == [f"E{i}" for i in range(per_thread)]


def test_clocked_record_from_threads_is_globally_monotone():
    ticks = itertools.count()
    log = EventLog(lambda: next(ticks))
    threads = [threading.Thread(target=lambda t=t: [log.record(EntityType.UNIT, f"u{t}", "X")
                                                    for _ in range(100)]) for t in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    stamps = [r.timestamp_ms for r in log.records]
    assert stamps == sorted(stamps) and len(stamps) == 800


def test_detail_formatting():
    assert format_detail(pilot="p", slot=[0, 1], none=None, empty=[]) == "pilot=p;slot=0|1"
    assert parse_detail("a=1;b=x|y") == {"a": "1", "b": "x|y"}
    assert parse_detail("") == {}
    assert format_detail(name="a;b\nc\x00") == "name=a,b c"


# the csv module cannot write NUL; format_detail strips it before it gets here
text = st.text(st.characters(blacklist_categories=("Cs",), blacklist_characters="\x00"), max_size=30)


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 10**12), st.sampled_from(list(EntityType)), text, text, text),
                max_size=20))
def test_csv_round_trip(rows):
    records = [EventRecord(*r) for r in rows]
    assert parse_csv(records_to_csv(records)) == records


@pytest.mark.parametrize("text", ["", "a,b\n", "timestamp_ms,entity_type,entity_id,event,detail\nx,UNIT,u,E,\n",
                                  "timestamp_ms,entity_type,entity_id,event,detail\n1,BOGUS,u,E,\n"])
def test_malformed_csv(text):
    with pytest.raises(MalformedLog):
        parse_csv(text)
