import json
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pilotkit.errors import InvalidDescription, MalformedLog, SingularDesign
from pilotkit.metrics import makespan_ms
from pilotkit.perfmodel import (MakespanModelInput, decompose, fit_throughput_model, ols,
                                predict_makespan, solve)

from helpers import sim_manager, sleep_graph


# -- analytical model ------------------------------------------------------------

def test_predict_examples():
    assert predict_makespan(MakespanModelInput(8, 2, 1000)) == 4000
    assert predict_makespan(MakespanModelInput(5, 2, 2000, o=100, Q=3000, S=1000)) == 10300
    assert predict_makespan(MakespanModelInput(0, 4, 1000, Q=5)) == 5


@pytest.mark.parametrize("kw", [dict(N=-1, k=1, d=1), dict(N=1, k=0, d=1), dict(N=1, k=1, d=-1)])
def test_model_input_validation(kw):
    with pytest.raises(InvalidDescription):
        MakespanModelInput(**kw)


@pytest.mark.parametrize("N,k,d,o,Q,S", [(7, 3, 1500, 0, 0, 0), (10, 4, 1000, 250, 2000, 500)])
def test_prediction_equals_simulation(N, k, d, o, Q, S):
    mgr = sim_manager(pilots=[k], queue_wait=Q / 1000, startup=S / 1000, launch_overhead=o / 1000)
    mgr.submit_units(sleep_graph([d / 1000] * N))
    mgr.run()
    assert makespan_ms(mgr.log.records) == predict_makespan(MakespanModelInput(N, k, d, o, Q, S))


# -- decomposition ------------------------------------------------------------------

def test_constant_overheads_per_pilot():
    mgr = sim_manager(pilots=[1, 2], queue_wait=10, startup=2)
    mgr.submit_units(sleep_graph([1, 1, 1]))
    mgr.run()
    d = decompose(mgr.log.records)
    assert d.pilots == {p: {"Q": 10_000, "S": 2000} for p in mgr.pilots}
    assert (d.queue_wait, d.startup, d.execution, d.residual) == (10_000, 2000, 1000, 0)


def test_zero_overhead_run():
    mgr = sim_manager(pilots=[2])
    mgr.submit_units(sleep_graph([1, 2, 1]))
    mgr.run()
    d = decompose(mgr.log.records)
    assert (d.queue_wait, d.startup, d.scheduling) == (0, 0, 0)
    assert set(d.unit_scheduling.values()) == {0}
    assert d.execution + d.residual == d.makespan == 2000


def test_chain_follows_slot_reuse():
    mgr = sim_manager(launch_overhead=0.1)
    ids = mgr.submit_units(sleep_graph([1, 2]))
    mgr.run()
    d = decompose(mgr.log.records)
    assert d.chain == ids[::-1]
    assert d.scheduling == 200 and d.execution == 3000 and d.residual == 0


def test_decompose_empty_log():
    with pytest.raises(MalformedLog):
        decompose([])


@pytest.mark.parametrize("seed", range(100))
def test_accounting_identity_on_random_runs(seed):
    rng = random.Random(seed)
    n = rng.randint(0, 10)
    deps = {i: sorted(rng.sample(range(i), rng.randint(0, min(2, i)))) for i in range(n)}
    mgr = sim_manager(pilots=[rng.randint(1, 3) for _ in range(rng.randint(1, 3))],
                      queue_wait={"dist": "UNIFORM", "low": 0, "high": 5}, startup=rng.choice([0, 1.5]),
                      launch_overhead=rng.choice([0, 0.05]), seed=seed)
    mgr.submit_units(sleep_graph([rng.randint(0, 3) for _ in range(n)], deps))
    mgr.run()
    d = decompose(mgr.log.records)
    c = d.components()
    assert sum(c.values()) == d.makespan == makespan_ms(mgr.log.records)
    assert min(c.values()) >= 0


# -- least squares ---------------------------------------------------------------------

def test_exact_linear_fit():
    rows = [{"slots": s, "throughput_per_s": 50 * s} for s in (1, 2, 3, 4, 5, 6, 7, 8, 9, 10)]
    model = fit_throughput_model(rows, ["slots"])
    assert model.coefficients == {"intercept": 0.0, "slots": 50.0}
    assert model.r2 == 1.0 and set(model.residuals) == {0.0}
    assert model.mape == 0.0 and (model.n, model.n_test) == (8, 2)
    assert set(json.loads(model.to_json())) == {"coefficients", "r2", "mape", "n"}


def test_duplicate_regressor_is_singular():
    rows = [{"a": x, "b": x, "throughput_per_s": 3 * x + 1} for x in range(10)]
    with pytest.raises(SingularDesign):
        fit_throughput_model(rows, ["a", "b"])


def test_too_few_rows():
    with pytest.raises(InvalidDescription):
        fit_throughput_model([{"a": 1, "throughput_per_s": 1}], ["a"], holdout=0)


def test_columns_from_param_point():
    rows = [{"param_point": f"rate={r}", "throughput_per_s": str(2 * r)} for r in range(1, 6)]
    model = fit_throughput_model(rows, ["rate"], holdout=0)
    assert model.coefficients["rate"] == 2.0 and model.mape is None


def test_solve_exact_rationals():
    assert solve([[2, 1], [1, 3]], [3, 5]) == [Fraction(4, 5), Fraction(7, 5)]
    with pytest.raises(SingularDesign):
        solve([[1, 2], [2, 4]], [1, 2])


finite = st.floats(-100, 100, allow_nan=False).map(lambda v: round(v, 3))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 3).flatmap(lambda p: st.lists(
    st.tuples(st.lists(finite, min_size=p, max_size=p), finite), min_size=p + 3, max_size=20)))
def test_ols_matches_numpy_lstsq(data):
    X = [[1.0] + xs for xs, _ in data]
    y = [t for _, t in data]
    A = np.array(X)
    if np.linalg.matrix_rank(A) < A.shape[1] or np.linalg.cond(A) > 1e6:
        return
    expected, *_ = np.linalg.lstsq(A, np.array(y), rcond=None)
    got = [float(b) for b in ols(X, y)]
    assert got == pytest.approx(list(expected), rel=1e-6, abs=1e-6)
