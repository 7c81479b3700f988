"""Analytical makespan model, makespan decomposition and an OLS throughput model."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

from .core import EntityType, EventRecord
from .errors import InvalidDescription, MalformedLog, SingularDesign
from .metrics import LogIndex


@dataclass(frozen=True)
class MakespanModelInput:
    N: int
    k: int
    d: float
    o: float = 0.0
    Q: float = 0.0
    S: float = 0.0

    def __post_init__(self):
        if min(self.N, self.d, self.o, self.Q, self.S) < 0:
            raise InvalidDescription("model inputs must be >= 0")
        if self.k < 1:
            raise InvalidDescription("k must be >= 1")


def predict_makespan(inp: MakespanModelInput) -> float:
    """Queue wait + startup + ``ceil(N/k)`` waves of (duration + overhead)."""
    waves = math.ceil(inp.N / inp.k) if inp.N else 0
    return inp.Q + inp.S + waves * (inp.d + inp.o)


# ---------------------------------------------------------------------------
# decomposition

@dataclass
class Decomposition:
    """Makespan split along the critical chain of the run.

    ``queue_wait`` and ``startup`` belong to the pilot the chain starts on,
    ``scheduling`` is the bind-to-run gap and ``execution`` the run time of
    each unit on the chain; ``residual`` is everything else (idle gaps,
    staging waits), so the five always sum to ``makespan``.
    """

    makespan: int
    queue_wait: int
    startup: int
    scheduling: int
    execution: int
    residual: int
    pilots: Dict[str, Dict[str, int]] = field(default_factory=dict)
    unit_scheduling: Dict[str, int] = field(default_factory=dict)
    chain: List[str] = field(default_factory=list)

    def components(self) -> Dict[str, int]:
        return {"Q": self.queue_wait, "S": self.startup, "scheduling": self.scheduling,
                "execution": self.execution, "residual": self.residual}

    def to_dict(self) -> dict:
        return {"makespan_ms": self.makespan, "components": self.components(),
                "pilots": self.pilots, "unit_scheduling": self.unit_scheduling,
                "chain": self.chain}


def _pilot_phases(idx: LogIndex, pid: str) -> Dict[str, int]:
    sub = idx.ts(EntityType.PILOT, pid, "SUBMITTED")
    act = idx.ts(EntityType.PILOT, pid, "ACTIVE")
    if sub is None or act is None:
        return {}
    startup = idx.ts(EntityType.PILOT, pid, "STARTUP")
    if startup is None:
        startup = act
    return {"Q": startup - sub, "S": act - startup}


def decompose(records: Iterable[EventRecord]) -> Decomposition:
    idx = LogIndex(records)
    if not idx.records:
        raise MalformedLog("event log has no records")
    U, PI = EntityType.UNIT, EntityType.PILOT
    makespan = idx.makespan()
    pilots = {}
    for pid in idx.ids(PI):
        phases = _pilot_phases(idx, pid)
        if phases:
            pilots[pid] = phases

    units = {}
    for uid in idx.ids(U):
        bound = idx.ts(U, uid, "BOUND")
        run = idx.ts(U, uid, "RUNNING")
        end = idx.unit_end(uid)
        bd = idx.detail(U, uid, "BOUND")
        units[uid] = {"bound": bound, "run": run, "end": end, "pilot": bd.get("pilot"),
                      "slots": set(bd.get("slot", "").split("|")) - {""},
                      "deps": [d for d in idx.detail(U, uid, "NEW").get("deps", "").split("|") if d]}
    unit_sched = {u: v["run"] - v["bound"] for u, v in units.items()
                  if v["run"] is not None and v["bound"] is not None}

    ran = [u for u, v in units.items() if v["run"] is not None and v["end"] is not None]
    chain: List[str] = []
    sched = execu = q = s = 0
    if ran and makespan:
        cur = max(ran, key=lambda u: (units[u]["end"], u))
        while cur is not None:
            v = units[cur]
            chain.append(cur)
            sched += v["run"] - v["bound"]
            execu += v["end"] - v["run"]
            # whatever released this unit: a dependency or the previous tenant of its slot
            causes = [d for d in v["deps"] if d in units and units[d]["end"] is not None
                      and units[d]["end"] <= v["bound"] and units[d]["run"] is not None]
            causes += [u for u in ran if u != cur and u not in chain
                       and units[u]["pilot"] == v["pilot"] and units[u]["slots"] & v["slots"]
                       and units[u]["end"] <= v["bound"]]
            cur = max(causes, key=lambda u: (units[u]["end"], u)) if causes else None
        root = units[chain[-1]]["pilot"]
        if root in pilots:
            q, s = pilots[root]["Q"], pilots[root]["S"]
    residual = makespan - q - s - sched - execu
    return Decomposition(makespan, q, s, sched, execu, residual, pilots, unit_sched, chain)


# ---------------------------------------------------------------------------
# statistical model

@dataclass
class ThroughputModel:
    regressors: List[str]
    coefficients: Dict[str, float]
    r2: float
    mape: Optional[float]
    n: int
    n_test: int
    residuals: List[float] = field(default_factory=list)

    def predict(self, row: Mapping[str, float]) -> float:
        return self.coefficients["intercept"] + sum(
            self.coefficients[r] * float(row[r]) for r in self.regressors)

    def to_dict(self) -> dict:
        return {"coefficients": self.coefficients, "r2": self.r2, "mape": self.mape, "n": self.n}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def solve(a: Sequence[Sequence], b: Sequence) -> List[Fraction]:
    """Gaussian elimination in exact rational arithmetic.

    Float inputs convert to :class:`~fractions.Fraction` without rounding, so
    a zero pivot means the system is genuinely singular.
    """
    n = len(a)
    m = [[Fraction(x) for x in row] + [Fraction(rhs)] for row, rhs in zip(a, b)]
    for col in range(n):
        piv = next((r for r in range(col, n) if m[r][col] != 0), None)
        if piv is None:
            raise SingularDesign(f"design matrix is singular (column {col} is dependent)")
        m[col], m[piv] = m[piv], m[col]
        for r in range(col + 1, n):
            f = m[r][col] / m[col][col]
            if f:
                for c in range(col, n + 1):
                    m[r][c] -= f * m[col][c]
    x = [Fraction(0)] * n
    for r in range(n - 1, -1, -1):
        x[r] = (m[r][n] - sum(m[r][c] * x[c] for c in range(r + 1, n))) / m[r][r]
    return x


def ols(X: Sequence[Sequence[float]], y: Sequence[float]) -> List[Fraction]:
    """Least squares via the normal equations; X includes the intercept column."""
    X = [[Fraction(v) for v in row] for row in X]
    y = [Fraction(v) for v in y]
    p = len(X[0])
    xtx = [[sum(row[i] * row[j] for row in X) for j in range(p)] for i in range(p)]
    xty = [sum(row[i] * t for row, t in zip(X, y)) for i in range(p)]
    return solve(xtx, xty)


def _column(row: Mapping, name: str) -> float:
    if name in row and row[name] not in ("", None):
        return float(row[name])
    point = row.get("param_point") or ""
    for part in point.split(";"):
        key, _, value = part.partition("=")
        if key == name:
            return float(value)
    raise InvalidDescription(f"row has no numeric column {name!r}")


def fit_throughput_model(rows: Sequence[Mapping], regressors: Sequence[str],
                         target: str = "throughput_per_s", holdout: float = 0.2) -> ThroughputModel:
    """OLS of ``target`` on ``regressors``; the last ``holdout`` fraction of rows is held out.

    Columns are looked up in each row first and then in its ``param_point``
    (``key=value;...``), so rows from an experiment's metrics CSV work as is.
    """
    regressors = list(regressors)
    if not regressors:
        raise InvalidDescription("need at least one regressor")
    n_test = int(math.floor(len(rows) * holdout))
    train = rows[:len(rows) - n_test]
    test = rows[len(rows) - n_test:]
    if len(train) < len(regressors) + 1:
        raise InvalidDescription(
            f"{len(train)} training rows for {len(regressors)} regressors; need at least {len(regressors) + 1}")
    X = [[1.0] + [_column(r, c) for c in regressors] for r in train]
    y = [_column(r, target) for r in train]
    beta = ols(X, y)
    coefficients = {"intercept": float(beta[0]), **{c: float(b) for c, b in zip(regressors, beta[1:])}}
    exact_y = [Fraction(t) for t in y]
    fitted = [sum(b * Fraction(x) for b, x in zip(beta, row)) for row in X]
    residuals = [t - f for t, f in zip(exact_y, fitted)]
    mean = sum(exact_y) / len(exact_y)
    ss_tot = sum((t - mean) ** 2 for t in exact_y)
    ss_res = sum(e * e for e in residuals)
    if ss_tot > 0:
        r2 = float(1 - ss_res / ss_tot)
    else:
        r2 = 1.0 if ss_res == 0 else 0.0
    model = ThroughputModel(regressors, coefficients, r2, None, len(train), len(test),
                            [float(e) for e in residuals])
    if test:
        errors = []
        for r in test:
            actual = _column(r, target)
            if actual == 0:
                raise InvalidDescription("MAPE undefined for a zero target in the held-out rows")
            errors.append(abs(actual - model.predict({c: _column(r, c) for c in regressors})) / abs(actual))
        model.mape = 100.0 * sum(errors) / len(errors)
    return model
