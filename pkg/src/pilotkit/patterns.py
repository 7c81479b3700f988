"""Drivers for the five application scenarios, built only on manager and data operations.

Every driver takes a :class:`~pilotkit.manager.PilotManager` that already has
(or will get) pilots, submits its units and blocks until they finish.
"""
from __future__ import annotations

import json
import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from .core import ComputeUnitDescription, KernelSpec, PilotState, UnitState
from .data import DataUnitDescription, source_bytes
from .errors import (BackpressureOverflow, InvalidDescription, KernelFailure,
                     KLargerThanDistinctPoints)
from .kernels import Broker
from .kernels.stream import DEFAULT_BOUND
from .metrics import message_latencies, percentile
from .workload import WorkloadGraph

log = logging.getLogger(__name__)

TASK_PARALLEL = "TASK_PARALLEL"
MAPREDUCE = "MAPREDUCE"
DATAFLOW = "DATAFLOW"
ITERATIVE = "ITERATIVE"
STREAMING = "STREAMING"
SCENARIOS = (TASK_PARALLEL, MAPREDUCE, DATAFLOW, ITERATIVE, STREAMING)

REQUIRED_PARAMETERS = {
    TASK_PARALLEL: ("n_tasks",),
    MAPREDUCE: ("n_mappers", "n_reducers"),
    DATAFLOW: ("workload",),
    ITERATIVE: ("k",),
    STREAMING: ("rate", "duration"),
}


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str
    parameters: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise InvalidDescription(f"unknown scenario {self.scenario!r}")
        missing = [p for p in REQUIRED_PARAMETERS[self.scenario] if p not in self.parameters]
        if missing:
            raise InvalidDescription(f"{self.scenario} needs parameters {missing}")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ScenarioSpec":
        if not isinstance(doc, Mapping) or "scenario" not in doc:
            raise InvalidDescription("scenario needs a 'scenario' name")
        return cls(doc["scenario"], dict(doc.get("parameters", {})))

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "parameters": dict(self.parameters)}


# ---------------------------------------------------------------------------
# shared helpers

def _start_time(manager) -> int:
    """Makespans count from now, or from the submission of pilots still on their way up."""
    now = manager.now_ms()
    waiting = [p.timestamp(PilotState.SUBMITTED) for p in manager.pilots.values()
               if p.state in (PilotState.SUBMITTED, PilotState.QUEUED)]
    return min([now] + waiting)


def _spans(manager, ids) -> Dict[str, Tuple[Optional[int], Optional[int]]]:
    out = {}
    for uid in ids:
        u = manager.units[uid]
        end = u.state_history[-1][1] if u.terminal else None
        out[uid] = (u.timestamp(UnitState.RUNNING), end)
    return out


def _makespan(manager, ids, start) -> int:
    ends = [manager.units[u].state_history[-1][1] for u in ids if manager.units[u].terminal]
    return max(ends) - start if ends else 0


def _raise_failures(manager, ids, what):
    bad = [u for u in ids if manager.units[u].state is not UnitState.DONE]
    if bad:
        first = manager.units[bad[0]]
        info = first.exit_info or (None, first.state.value)
        raise KernelFailure(f"{what}: {len(bad)} unit(s) did not finish, first {bad[0]} "
                            f"({first.state.value}: {info[1]})", info[0])


def _replica(manager, du_id) -> str:
    holders = manager.data.holders(du_id)
    if not holders:
        raise KernelFailure(f"output {du_id} has no replica")
    return manager.data.replica_path(du_id, sorted(holders)[0])


# ---------------------------------------------------------------------------
# task-parallel

@dataclass
class TaskParallelResult:
    unit_ids: List[str]
    makespan_ms: int
    spans: Dict[str, Tuple[Optional[int], Optional[int]]]


def run_task_parallel(manager, n_tasks: int, kernel: Optional[KernelSpec] = None,
                      duration: float = 1.0, durations: Optional[Sequence[float]] = None,
                      timeout: Optional[float] = None) -> TaskParallelResult:
    """Run ``n_tasks`` independent units; durations are seconds of ``sleep`` by default."""
    if durations is not None and len(durations) != n_tasks:
        raise InvalidDescription("durations must have n_tasks entries")
    start = _start_time(manager)
    graph = WorkloadGraph()
    for i in range(n_tasks):
        if kernel is not None:
            spec = kernel
        else:
            d = durations[i] if durations is not None else duration
            spec = KernelSpec.builtin("sleep", duration=d)
        graph.add(f"task-{i}", ComputeUnitDescription(kernel=spec))
    ids = manager.submit_units(graph)
    if ids:
        manager.wait(ids, timeout)
    _raise_failures(manager, ids, "task-parallel")
    return TaskParallelResult(ids, _makespan(manager, ids, start), _spans(manager, ids))


# ---------------------------------------------------------------------------
# MapReduce

@dataclass
class MapReduceResult:
    result_du: str
    result_path: str
    makespan_ms: int
    unit_ids: List[str]

    def read(self) -> bytes:
        with open(self.result_path, "rb") as fh:
            return fh.read()


def serial_wordcount(data: bytes) -> bytes:
    """Reference word count: sorted ``word<TAB>count`` lines."""
    counts = Counter(data.split())
    return b"".join(b"%s\t%d\n" % (w, counts[w]) for w in sorted(counts))


def run_mapreduce(manager, inputs: Sequence[Union[str, DataUnitDescription]], n_mappers: int,
                  n_reducers: int, job: str = "wordcount", map_duration_ms: int = 0,
                  reduce_duration_ms: int = 0, timeout: Optional[float] = None) -> MapReduceResult:
    """Word count with ``n_mappers`` line splits and ``n_reducers`` hash partitions.

    Mapper outputs hold one ``part-NNNNN`` file per reducer; the shuffle is the
    reducers reading their partition from every mapper output. A final merge
    unit concatenates the (disjoint) reducer outputs into ``result.tsv``.
    """
    if job != "wordcount":
        raise InvalidDescription(f"unknown MapReduce job {job!r}")
    if n_mappers < 1 or n_reducers < 1:
        raise InvalidDescription("n_mappers and n_reducers must be >= 1")
    start = _start_time(manager)
    graph = WorkloadGraph()
    input_names = []
    for i, item in enumerate(inputs):
        if isinstance(item, DataUnitDescription):
            name = f"input-{i}"
            graph.data[name] = item
            input_names.append(name)
        else:
            input_names.append(item)
    for m in range(n_mappers):
        graph.add(f"map-{m}", ComputeUnitDescription(
            kernel=KernelSpec.builtin("wordcount_map", split_index=m, n_splits=n_mappers,
                                      n_reducers=n_reducers, sim_duration_ms=map_duration_ms),
            input_data=tuple(input_names), output_data=f"map-out-{m}"))
    maps = tuple(f"map-out-{m}" for m in range(n_mappers))
    for r in range(n_reducers):
        graph.add(f"reduce-{r}", ComputeUnitDescription(
            kernel=KernelSpec.builtin("wordcount_reduce", partition=r, output_name=f"part-{r:05d}",
                                      sim_duration_ms=reduce_duration_ms),
            input_data=maps, output_data=f"reduce-out-{r}"))
    graph.add("merge", ComputeUnitDescription(
        kernel=KernelSpec.builtin("wordcount_reduce", output_name="result.tsv"),
        input_data=tuple(f"reduce-out-{r}" for r in range(n_reducers)), output_data="wordcount"))
    ids = manager.submit_units(graph)
    manager.wait(ids, timeout)
    _raise_failures(manager, ids, "mapreduce")
    result_du = manager.units[ids[-1]].description.output_data
    path = os.path.join(_replica(manager, result_du), "result.tsv")
    return MapReduceResult(result_du, path, _makespan(manager, ids, start), ids)


# ---------------------------------------------------------------------------
# dataflow

@dataclass
class DataflowReport:
    unit_ids: Dict[str, str]
    states: Dict[str, UnitState]
    order: List[str]
    makespan_ms: int

    @property
    def ok(self) -> bool:
        return all(s is UnitState.DONE for s in self.states.values())


def run_dataflow(manager, graph: WorkloadGraph, timeout: Optional[float] = None) -> DataflowReport:
    """Submit a DAG with control and data edges and wait for every stage.

    Failures do not raise; they show up in ``states`` (downstream units of a
    failed stage end CANCELED).
    """
    order = graph.topological_order()
    start = _start_time(manager)
    ids = manager.submit_units(graph)
    names = list(graph.units)
    if ids:
        manager.wait(ids, timeout)
    unit_ids = dict(zip(names, ids))
    states = {n: manager.units[u].state for n, u in unit_ids.items()}
    return DataflowReport(unit_ids, states, order, _makespan(manager, ids, start))


# ---------------------------------------------------------------------------
# iterative k-means

@dataclass
class KMeansResult:
    centroids: List[List[float]]
    iterations: int
    converged: bool
    sse_history: List[float]
    shifts: List[float]
    partition_ids: List[str]
    iteration_units: List[List[str]]
    makespan_ms: int


def parse_point_rows(data: bytes) -> List[Tuple[float, ...]]:
    rows = []
    for line in data.decode("utf-8").splitlines():
        if line.strip():
            rows.append(tuple(float(v) for v in line.split()))
    if rows and any(len(r) != len(rows[0]) for r in rows):
        raise InvalidDescription("points must all have the same dimension")
    return rows


def format_point_rows(rows) -> bytes:
    # repr keeps every float bit-exact through the text round trip
    return "".join(" ".join(repr(float(v)) for v in r) + "\n" for r in rows).encode("ascii")


def initial_centroids(rows, k: int) -> List[List[float]]:
    """The first ``k`` distinct points in file order."""
    seen = []
    for r in rows:
        if r not in seen:
            seen.append(r)
            if len(seen) == k:
                break
    if len(seen) < k:
        raise KLargerThanDistinctPoints(f"k={k} but only {len(seen)} distinct points")
    return [list(p) for p in seen]


def run_iterative_kmeans(manager, points: Union[DataUnitDescription, Sequence[Sequence[float]]],
                         k: int, max_iters: int = 20, epsilon: float = 1e-9,
                         n_partitions: int = 2, assign_duration_ms: int = 0,
                         update_duration_ms: int = 0, timeout: Optional[float] = None) -> KMeansResult:
    """Lloyd's algorithm with point partitions registered once and reused every iteration.

    Each iteration submits one ``kmeans_assign`` unit per partition plus a
    ``kmeans_update`` unit; partitions are staged to a pilot at most once and
    then read from the cached replica. Stops when the largest centroid shift
    drops below ``epsilon`` or after ``max_iters`` iterations.
    """
    if k < 1:
        raise InvalidDescription("k must be >= 1")
    if max_iters < 1 or n_partitions < 1:
        raise InvalidDescription("max_iters and n_partitions must be >= 1")
    if isinstance(points, DataUnitDescription):
        rows = parse_point_rows(source_bytes(points))
    else:
        rows = [tuple(float(v) for v in r) for r in points]
    centroids = initial_centroids(rows, k)
    start = _start_time(manager)

    n_partitions = min(n_partitions, max(1, len(rows)))
    part_ids = []
    for p in range(n_partitions):
        lo, hi = p * len(rows) // n_partitions, (p + 1) * len(rows) // n_partitions
        part_ids.append(manager.register_data(
            DataUnitDescription.inline(format_point_rows(rows[lo:hi])), f"points-{p}"))

    sse_history, shifts, iteration_units, all_ids = [], [], [], []
    converged = False
    it = 0
    while it < max_iters:
        it += 1
        graph = WorkloadGraph()
        for p, du in enumerate(part_ids):
            graph.add(f"assign-{p}", ComputeUnitDescription(
                kernel=KernelSpec.builtin("kmeans_assign", centroids=centroids,
                                          sim_duration_ms=assign_duration_ms),
                input_data=(du,), output_data=f"partial-{p}"))
        graph.add("update", ComputeUnitDescription(
            kernel=KernelSpec.builtin("kmeans_update", centroids=centroids,
                                      sim_duration_ms=update_duration_ms),
            input_data=tuple(f"partial-{p}" for p in range(len(part_ids))),
            output_data="centroids"))
        ids = manager.submit_units(graph)
        iteration_units.append(ids)
        all_ids.extend(ids)
        manager.wait(ids, timeout)
        _raise_failures(manager, ids, f"k-means iteration {it}")
        out = manager.units[ids[-1]].description.output_data
        with open(os.path.join(_replica(manager, out), "centroids.json")) as fh:
            doc = json.load(fh)
        centroids = doc["centroids"]
        sse_history.append(doc["sse"])
        shifts.append(doc["shift"])
        log.debug("k-means iteration %d: shift=%g sse=%g", it, doc["shift"], doc["sse"])
        if doc["shift"] < epsilon:
            converged = True
            break
    return KMeansResult(centroids, it, converged, sse_history, shifts, part_ids,
                        iteration_units, _makespan(manager, all_ids, start))


# ---------------------------------------------------------------------------
# streaming

@dataclass
class StreamingResult:
    broker_id: str
    produced: int
    consumed: int
    dropped: int
    throughput_per_s: float
    latency_p50_ms: Optional[float]
    latency_p99_ms: Optional[float]
    unit_ids: List[str]
    overflow: Optional[BackpressureOverflow] = None


def run_streaming(manager, rate: float, duration: float, message_size: int = 0,
                  n_consumers: int = 1, n_producers: int = 1, bound: int = DEFAULT_BOUND,
                  batch_interval_ms: int = 100, max_batch: Optional[int] = None,
                  timeout: Optional[float] = None) -> StreamingResult:
    """Producers publish at ``rate`` msgs/s in total for ``duration`` s; consumers poll in micro-batches.

    Throughput and latency percentiles are recomputed from the broker's
    events in the log. Drops caused by the broker bound are reported through
    ``overflow`` rather than raised.
    """
    if rate <= 0:
        raise InvalidDescription("rate must be > 0")
    if duration < 0:
        raise InvalidDescription("duration must be >= 0")
    if n_consumers < 1 or n_producers < 1:
        raise InvalidDescription("need at least one producer and one consumer")
    broker_id = manager.ids.next("broker")
    broker = Broker(broker_id, manager.log, bound=bound, producers=n_producers)
    manager.resources["brokers"][broker_id] = broker
    per_producer = int(round(rate * duration)) // n_producers
    graph = WorkloadGraph()
    for p in range(n_producers):
        graph.add(f"producer-{p}", ComputeUnitDescription(kernel=KernelSpec.builtin(
            "stream_produce", broker=broker_id, rate=rate / n_producers, duration=duration,
            msg_base=p * per_producer, message_size=message_size,
            sim_duration_ms=int(round(duration * 1000)))))
    for c in range(n_consumers):
        graph.add(f"consumer-{c}", ComputeUnitDescription(kernel=KernelSpec.builtin(
            "stream_consume", broker=broker_id, batch_interval_ms=batch_interval_ms,
            max_batch=max_batch)))
    ids = manager.submit_units(graph)
    manager.wait(ids, timeout)
    _raise_failures(manager, ids, "streaming")

    records = [r for r in manager.log.records if r.entity_id == broker_id]
    produced, consumed, dropped, lat, first_p, last_c = message_latencies(records)
    span = (last_c - first_p) if consumed else 0
    overflow = None
    if dropped:
        overflow = BackpressureOverflow(f"broker {broker_id} dropped {dropped} of {produced} messages",
                                        dropped)
        log.warning("%s", overflow)
    return StreamingResult(
        broker_id, produced, consumed, dropped,
        consumed * 1000.0 / span if span > 0 else 0.0,
        percentile(lat, 50), percentile(lat, 99), ids, overflow)
