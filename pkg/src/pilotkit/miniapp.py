"""Mini-App harness: declarative manifests, synthetic workloads and multi-trial experiments."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import itertools
import json
import logging
import os
import random
import shutil
import tempfile
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import jsonschema

from . import patterns
from .backend import BackendDescriptor
from .core import (ComputeUnitDescription, EventRecord, KernelSpec, PilotDescription, parse_csv,
                   records_to_csv)
from .data import DataUnitDescription
from .dists import Distribution
from .errors import InvalidDescription, PilotkitError
from .manager import ManagerConfig, PilotManager
from .metrics import derive_metrics, format_value
from .patterns import ScenarioSpec
from .workload import WorkloadGraph

log = logging.getLogger(__name__)

METRICS_HEADER = ("trial", "param_point", "status", "makespan_ms", "task_runtime_mean_ms",
                  "task_runtime_p99_ms", "pilot_overhead_ms", "throughput_per_s",
                  "latency_p50_ms", "latency_p99_ms", "utilization")

DAG_SHAPES = ("CHAIN", "FANOUT", "DIAMOND")
ARRIVALS = ("BULK", "POISSON")
PILOT_FIELDS = ("slots", "cores_per_slot", "walltime_limit", "queue_name")
SEED_MASK = (1 << 63) - 1


# ---------------------------------------------------------------------------
# synthetic workloads

@dataclass(frozen=True)
class WorkloadGenSpec:
    """Synthetic workload: durations in ms, data sizes in bytes, arrival rate in units/s."""

    n_tasks: int = 0
    duration_dist: Distribution = Distribution.constant(1000)
    data_size_dist: Optional[Distribution] = None
    arrival: str = "BULK"
    arrival_rate: float = 0.0
    dag_shape: Optional[str] = None
    shape_param: int = 0

    def __post_init__(self):
        if self.n_tasks < 0:
            raise InvalidDescription("n_tasks must be >= 0")
        if self.arrival not in ARRIVALS:
            raise InvalidDescription(f"arrival must be one of {ARRIVALS}")
        if self.arrival == "POISSON" and not self.arrival_rate > 0:
            raise InvalidDescription("POISSON arrival needs arrival_rate > 0")
        if self.dag_shape is not None:
            if self.dag_shape not in DAG_SHAPES:
                raise InvalidDescription(f"dag_shape must be one of {DAG_SHAPES}")
            if self.dag_shape in ("CHAIN", "FANOUT") and self.shape_param < 1:
                raise InvalidDescription(f"{self.dag_shape} needs shape_param >= 1")

    @classmethod
    def from_parameters(cls, params: Mapping) -> "WorkloadGenSpec":
        if "duration_ms" in params:
            dur = Distribution.parse(params["duration_ms"])
        else:
            dur = Distribution.constant(float(params.get("duration", 1.0)) * 1000.0)
        size = params.get("data_size")
        return cls(
            n_tasks=int(params.get("n_tasks", 0)),
            duration_dist=dur,
            data_size_dist=None if size is None else Distribution.parse(size),
            arrival=str(params.get("arrival", "BULK")).upper(),
            arrival_rate=float(params.get("arrival_rate", 0.0)),
            dag_shape=None if params.get("dag_shape") is None else str(params["dag_shape"]).upper(),
            shape_param=int(params.get("shape_param", params.get("depth", params.get("width", 0)))),
        )


def _predecessors(i: int, shape: Optional[str], param: int) -> List[int]:
    if shape == "CHAIN":
        return [i - 1] if i % param else []
    if shape == "FANOUT":
        pos = i % (param + 1)
        return [i - pos] if pos else []
    if shape == "DIAMOND":
        pos = i % 4
        base = i - pos
        return {0: [], 1: [base], 2: [base], 3: [base + 1, base + 2]}[pos]
    return []


def generate_workload(spec: WorkloadGenSpec, seed: int) -> WorkloadGraph:
    """Deterministic in ``(spec, seed)``. Per unit the draws are duration, size, inter-arrival.

    Units run ``sleep`` for their drawn duration. With a data size
    distribution each unit also writes an output of that size, which its
    DAG successors declare as input.
    """
    rng = random.Random(seed)
    graph = WorkloadGraph()
    t = 0.0
    for i in range(spec.n_tasks):
        d = int(round(spec.duration_dist.sample(rng)))
        size = None if spec.data_size_dist is None else int(round(spec.data_size_dist.sample(rng)))
        if spec.arrival == "POISSON":
            t += rng.expovariate(spec.arrival_rate)
        params = {"duration": d / 1000.0, "sim_duration_ms": d}
        if size is not None:
            params["output_bytes"] = size
        preds = _predecessors(i, spec.dag_shape, spec.shape_param)
        graph.add(f"task-{i}", ComputeUnitDescription(
            kernel=KernelSpec.builtin("sleep", **params),
            depends_on=frozenset(f"task-{p}" for p in preds),
            input_data=tuple(f"out-{p}" for p in preds) if size is not None else (),
            output_data=f"out-{i}" if size is not None else None,
        ), release_ms=int(round(t * 1000)))
    return graph


# ---------------------------------------------------------------------------
# manifests

MANIFEST_SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "seed": {"type": "integer"},
        "backend": {"type": "object"},
        "pilots": {"type": "array", "minItems": 1, "items": {"type": "object"}},
        "scenario": {"type": "object"},
        "trials": {"type": "integer", "minimum": 1},
        "sweep": {"type": "object", "additionalProperties": {"type": "array", "minItems": 1}},
        "output_dir": {"type": ["string", "null"]},
        "manager": {"type": "object"},
        "timeout": {"type": ["number", "null"], "exclusiveMinimum": 0},
    },
    "required": ["name", "seed", "backend", "pilots", "scenario"],
    "additionalProperties": False,
}


@dataclass
class ExperimentManifest:
    name: str
    seed: int
    backend: BackendDescriptor
    pilots: List[PilotDescription]
    scenario: ScenarioSpec
    trials: int = 1
    sweep: Dict[str, List[Any]] = field(default_factory=dict)
    output_dir: Optional[str] = None
    manager: ManagerConfig = field(default_factory=ManagerConfig)
    timeout: Optional[float] = None

    def __post_init__(self):
        for key in self.sweep:
            self.sweep_target(key)

    def sweep_target(self, key: str) -> str:
        """Where a sweep key applies: ``scenario``, ``pilot`` or ``backend``."""
        if key in self.scenario.parameters:
            return "scenario"
        if key in PILOT_FIELDS:
            return "pilot"
        if key.startswith("backend.") and len(key) > len("backend."):
            return "backend"
        raise InvalidDescription(
            f"sweep key {key!r} is not a scenario parameter, pilot field or backend.<param>")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ExperimentManifest":
        try:
            jsonschema.validate(doc, MANIFEST_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path)
            raise InvalidDescription(f"manifest{' at ' + where if where else ''}: {exc.message}") from None
        backend = BackendDescriptor.from_dict(doc["backend"])
        pilots = []
        for p in doc["pilots"]:
            unknown = set(p) - set(PILOT_FIELDS) - {"backend_id"}
            if unknown:
                raise InvalidDescription(f"unknown pilot fields {sorted(unknown)}")
            if p.get("backend_id", backend.backend_id) != backend.backend_id:
                raise InvalidDescription(f"pilot names unknown backend {p['backend_id']!r}")
            pilots.append(PilotDescription(backend.backend_id, **{k: v for k, v in p.items()
                                                                   if k in PILOT_FIELDS}))
        mgr = doc.get("manager", {})
        unknown = set(mgr) - {"scheduling_policy", "poll_interval_ms", "max_queue_length"}
        if unknown:
            raise InvalidDescription(f"unknown manager fields {sorted(unknown)}")
        return cls(
            name=doc["name"], seed=int(doc["seed"]), backend=backend, pilots=pilots,
            scenario=ScenarioSpec.from_dict(doc["scenario"]), trials=int(doc.get("trials", 1)),
            sweep={k: list(v) for k, v in doc.get("sweep", {}).items()},
            output_dir=doc.get("output_dir"), manager=ManagerConfig(**mgr),
            timeout=doc.get("timeout"))

    @classmethod
    def load(cls, path) -> "ExperimentManifest":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InvalidDescription(f"manifest is not valid JSON: {exc}") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        pilots = []
        for p in self.pilots:
            d = {"slots": p.slots, "cores_per_slot": p.cores_per_slot,
                 "walltime_limit": p.walltime_limit}
            if p.queue_name is not None:
                d["queue_name"] = p.queue_name
            pilots.append(d)
        doc = {"name": self.name, "seed": self.seed, "backend": self.backend.to_dict(),
               "pilots": pilots, "scenario": self.scenario.to_dict(), "trials": self.trials,
               "manager": dataclasses.asdict(self.manager)}
        if self.sweep:
            doc["sweep"] = self.sweep
        if self.output_dir is not None:
            doc["output_dir"] = self.output_dir
        if self.timeout is not None:
            doc["timeout"] = self.timeout
        return doc

    def grid(self) -> List[Dict[str, Any]]:
        keys = list(self.sweep)
        return [dict(zip(keys, values)) for values in itertools.product(*(self.sweep[k] for k in keys))]


def derived_seed(seed: int, point: Mapping[str, Any], trial: int) -> int:
    """``seed`` XOR the first 8 bytes of SHA-256 over the canonical JSON of ``[point, trial]``."""
    blob = json.dumps([dict(point), int(trial)], sort_keys=True, separators=(",", ":")).encode()
    return (int(seed) ^ int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")) & SEED_MASK


def format_point(point: Mapping[str, Any]) -> str:
    if not point:
        return "-"
    return ";".join(f"{k}={v if isinstance(v, str) else json.dumps(v)}" for k, v in point.items())


# ---------------------------------------------------------------------------
# running

@dataclass
class RunOutcome:
    index: int
    trial: int
    point: Dict[str, Any]
    seed: int
    status: str
    records: List[EventRecord]
    result: Any = None


def _resolve(manifest: ExperimentManifest, point: Mapping[str, Any], seed: int):
    params = dict(manifest.scenario.parameters)
    pilot_updates = {}
    backend_updates = {}
    for key, value in point.items():
        target = manifest.sweep_target(key)
        if target == "scenario":
            params[key] = value
        elif target == "pilot":
            pilot_updates[key] = value
        else:
            backend_updates[key[len("backend."):]] = value
    backend = manifest.backend
    if backend.is_simulated:
        backend_updates["seed"] = seed
    if backend_updates:
        backend = backend.with_parameters(**backend_updates)
    pilots = [dataclasses.replace(p, **pilot_updates) for p in manifest.pilots]
    return backend, pilots, ScenarioSpec(manifest.scenario.scenario, params)


def _blob_points(n: int, seed: int) -> List[Tuple[float, float]]:
    rng = random.Random(seed)
    centers = ((0.0, 0.0), (10.0, 10.0))
    return [(centers[i % 2][0] + rng.uniform(-1, 1), centers[i % 2][1] + rng.uniform(-1, 1))
            for i in range(n)]


def run_scenario(manager: PilotManager, scenario: ScenarioSpec, seed: int,
                 timeout: Optional[float] = None) -> Tuple[str, Any]:
    """Dispatch one scenario on ``manager``; returns ``(status, driver result)``."""
    p = scenario.parameters
    kind = scenario.scenario
    if kind in (patterns.TASK_PARALLEL, patterns.DATAFLOW):
        if kind == patterns.DATAFLOW:
            graph = WorkloadGraph.from_dict(p["workload"])
        else:
            graph = generate_workload(WorkloadGenSpec.from_parameters(p), seed)
        report = patterns.run_dataflow(manager, graph, timeout)
        return ("OK" if report.ok else "FAILED"), report
    if kind == patterns.MAPREDUCE:
        if "corpus_path" in p:
            corpus = DataUnitDescription.files([p["corpus_path"]])
        else:
            corpus = DataUnitDescription.generated("random_text", int(p.get("corpus_size", 1 << 20)),
                                                   int(p.get("corpus_seed", 0)))
        res = patterns.run_mapreduce(manager, [corpus], int(p["n_mappers"]), int(p["n_reducers"]),
                                     map_duration_ms=int(p.get("map_duration_ms", 0)),
                                     reduce_duration_ms=int(p.get("reduce_duration_ms", 0)),
                                     timeout=timeout)
        return "OK", res
    if kind == patterns.ITERATIVE:
        if "points" in p:
            points = p["points"]
        elif "points_path" in p:
            points = DataUnitDescription.files([p["points_path"]])
        else:
            points = _blob_points(int(p.get("n_points", 100)), seed)
        res = patterns.run_iterative_kmeans(
            manager, points, int(p["k"]), max_iters=int(p.get("max_iters", 20)),
            epsilon=float(p.get("epsilon", 1e-9)), n_partitions=int(p.get("n_partitions", 2)),
            assign_duration_ms=int(p.get("assign_duration_ms", 0)),
            update_duration_ms=int(p.get("update_duration_ms", 0)), timeout=timeout)
        return "OK", res
    res = patterns.run_streaming(
        manager, float(p["rate"]), float(p["duration"]), message_size=int(p.get("message_size", 0)),
        n_consumers=int(p.get("n_consumers", 1)), n_producers=int(p.get("n_producers", 1)),
        bound=int(p.get("bound", 10_000)), batch_interval_ms=int(p.get("batch_interval_ms", 100)),
        max_batch=p.get("max_batch"), timeout=timeout)
    return "OK", res


def run_single(manifest: ExperimentManifest, point: Mapping[str, Any], trial: int,
               index: int = 0, work_dir: Optional[str] = None) -> RunOutcome:
    """Execute one (grid point, trial) in a fresh manager and return its log."""
    seed = derived_seed(manifest.seed, point, trial)
    backend, pilots, scenario = _resolve(manifest, point, seed)
    own_dir = work_dir is None
    if own_dir:
        work_dir = tempfile.mkdtemp(prefix="pilotkit-run-")
    manager = PilotManager([backend], manifest.manager, work_dir=work_dir)
    result = None
    try:
        for p in pilots:
            manager.submit_pilot(p)
        status, result = run_scenario(manager, scenario, seed, manifest.timeout)
    except PilotkitError as exc:
        log.warning("run %d trial %d failed: %s", index, trial, exc)
        status = f"FAILED:{type(exc).__name__}"
    finally:
        manager.close()
        if own_dir:
            shutil.rmtree(work_dir, ignore_errors=True)
    return RunOutcome(index, trial, dict(point), seed, status, manager.log.records, result)


@dataclass
class MetricsBundle:
    output_dir: str
    manifest_path: str
    metrics_csv: str
    event_csvs: List[str]
    rows: List[Dict[str, str]]


def metrics_row(trial: int, point: Mapping[str, Any], status: str, records) -> Dict[str, str]:
    m = derive_metrics(records)
    row = {"trial": str(trial), "param_point": format_point(point), "status": status}
    for col in METRICS_HEADER[3:]:
        row[col] = format_value(getattr(m, col))
    return row


def rows_to_csv(rows: Sequence[Mapping[str, str]]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=METRICS_HEADER, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def read_metrics_csv(path) -> List[Dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def run_experiment(manifest: ExperimentManifest, output_dir: Optional[str] = None) -> MetricsBundle:
    """Run every grid point ``trials`` times, sequentially, and write the results.

    Layout of ``output_dir``: ``manifest.json``, ``events/run-<i>-trial-<t>.csv``
    and ``metrics.csv`` (one row per run, recomputed from the written CSVs).
    """
    out = output_dir or manifest.output_dir
    if not out:
        raise InvalidDescription("no output directory given")
    os.makedirs(os.path.join(out, "events"), exist_ok=True)
    manifest_path = os.path.join(out, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    rows, csvs = [], []
    for i, point in enumerate(manifest.grid()):
        for trial in range(manifest.trials):
            outcome = run_single(manifest, point, trial, index=i)
            path = os.path.join(out, "events", f"run-{i}-trial-{trial}.csv")
            text = records_to_csv(outcome.records)
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            csvs.append(path)
            rows.append(metrics_row(trial, point, outcome.status, parse_csv(text)))
            log.info("run %d trial %d: %s", i, trial, outcome.status)
    metrics_path = os.path.join(out, "metrics.csv")
    with open(metrics_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(rows_to_csv(rows))
    return MetricsBundle(out, manifest_path, metrics_path, csvs, rows)
