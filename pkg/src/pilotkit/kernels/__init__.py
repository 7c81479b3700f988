"""Builtin compute kernels and the dispatcher used by every backend."""
from __future__ import annotations

import json
import logging
import os
import subprocess
import threading
import time
from array import array
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional

from ..core import KernelSpec
from . import accel
from .stream import Broker, stream_consume, stream_produce

log = logging.getLogger(__name__)

# kernels whose outputs matter; simulated backends execute these (timing is
# still virtual), everything else is only timed
SIM_EXECUTED = frozenset({
    "wordcount_map", "wordcount_reduce", "kmeans_assign", "kmeans_update",
    "stream_produce", "stream_consume", "noop",
})


@dataclass
class KernelContext:
    unit_id: str
    kernel: KernelSpec
    arguments: tuple = ()
    inputs: Dict[str, str] = field(default_factory=dict)
    output_dir: Optional[str] = None
    work_dir: Optional[str] = None
    sim: Any = None
    cancel: threading.Event = field(default_factory=threading.Event)
    resources: Dict[str, Any] = field(default_factory=dict)
    register_process: Optional[Callable] = None
    # SIM only: a kernel that sets ``sim_deferred`` ends its unit by calling ``sim_complete``
    sim_deferred: bool = False
    sim_complete: Optional[Callable] = None

    @property
    def params(self):
        return self.kernel.parameters

    def input_files(self):
        """All files of all inputs, in input order then filename order."""
        for du in self.inputs:
            root = self.inputs[du]
            for name in sorted(os.listdir(root)):
                yield os.path.join(root, name)


def run_kernel(ctx: KernelContext, simulated: bool):
    """Execute ``ctx.kernel``; returns ``(exit_code, message)``."""
    spec = ctx.kernel
    if simulated:
        if spec.variant == "BUILTIN" and spec.name in ("sleep", "busy_spin"):
            # time is virtual; only the declared output is produced
            _write_filler(ctx)
            return 0, ""
        if spec.variant != "BUILTIN" or spec.name not in SIM_EXECUTED:
            return 0, ""
    elif spec.variant == "EXTERNAL":
        return _run_external(ctx)
    try:
        BUILTINS[spec.name](ctx)
    except Exception as exc:
        log.debug("kernel %s of %s failed", spec.name, ctx.unit_id, exc_info=True)
        return 1, f"{type(exc).__name__}: {exc}"
    return 0, ""


def _run_external(ctx: KernelContext):
    argv = list(ctx.kernel.argv) + list(ctx.arguments)
    os.makedirs(ctx.work_dir, exist_ok=True)
    env = dict(os.environ)
    env["PILOTKIT_INPUTS"] = json.dumps(ctx.inputs)
    if ctx.output_dir:
        env["PILOTKIT_OUTPUT"] = ctx.output_dir
    try:
        with open(os.path.join(ctx.work_dir, "stdout"), "wb") as out, \
                open(os.path.join(ctx.work_dir, "stderr"), "wb") as err:
            proc = subprocess.Popen(argv, cwd=ctx.work_dir, stdout=out, stderr=err, env=env)
            if ctx.register_process:
                ctx.register_process(proc)
            code = proc.wait()
    except OSError as exc:
        return 127, f"{type(exc).__name__}: {exc}"
    return code, "" if code == 0 else f"exit code {code}"


# ---------------------------------------------------------------------------
# generic kernels

def _write_filler(ctx):
    n = int(ctx.params.get("output_bytes", 0))
    if ctx.output_dir and n:
        with open(os.path.join(ctx.output_dir, "data"), "wb") as fh:
            fh.write((bytes(range(251)) * (n // 251 + 1))[:n])


def sleep(ctx):
    ctx.cancel.wait(float(ctx.params.get("duration", 0)))
    _write_filler(ctx)


def busy_spin(ctx):
    end = time.perf_counter() + float(ctx.params.get("duration", 0))
    x = 0
    while time.perf_counter() < end and not ctx.cancel.is_set():
        for _ in range(1000):
            x += 1
    _write_filler(ctx)


def noop(ctx):
    _write_filler(ctx)
    if ctx.params.get("fail"):
        raise RuntimeError(str(ctx.params["fail"]))


# ---------------------------------------------------------------------------
# wordcount

def _read_inputs(ctx) -> bytes:
    chunks = []
    for path in ctx.input_files():
        with open(path, "rb") as fh:
            chunks.append(fh.read())
    return b"".join(chunks)


def split_lines(data: bytes, index: int, n_splits: int) -> bytes:
    """Contiguous line range ``index`` of ``n_splits``; words never straddle splits."""
    lines = data.splitlines(keepends=True)
    lo = index * len(lines) // n_splits
    hi = (index + 1) * len(lines) // n_splits
    return b"".join(lines[lo:hi])


def write_counts(path, counts: dict):
    with open(path, "wb") as fh:
        fh.write(b"".join(b"%s\t%d\n" % (w, counts[w]) for w in sorted(counts)))


def read_counts(path, into: dict):
    with open(path, "rb") as fh:
        for line in fh:
            word, _, n = line.rstrip(b"\n").rpartition(b"\t")
            into[word] = into.get(word, 0) + int(n)


def wordcount_map(ctx):
    p = ctx.params
    n_red = int(p.get("n_reducers", 1))
    chunk = split_lines(_read_inputs(ctx), int(p.get("split_index", 0)), int(p.get("n_splits", 1)))
    parts = accel.partition_counts(accel.count_tokens(chunk), n_red)
    for r, counts in enumerate(parts):
        write_counts(os.path.join(ctx.output_dir, f"part-{r:05d}"), counts)


def wordcount_reduce(ctx):
    """Sum partition ``partition`` of every input; ``partition=None`` merges all files."""
    part = ctx.params.get("partition")
    wanted = None if part is None else f"part-{int(part):05d}"
    counts: dict = {}
    for path in ctx.input_files():
        if wanted is None or os.path.basename(path) == wanted:
            read_counts(path, counts)
    write_counts(os.path.join(ctx.output_dir, ctx.params.get("output_name", "result.tsv")), counts)


# ---------------------------------------------------------------------------
# k-means

def parse_points(data: bytes):
    rows = [line.split() for line in data.decode("utf-8").splitlines() if line.strip()]
    if not rows:
        return array("d"), 0
    dim = len(rows[0])
    flat = array("d")
    for row in rows:
        if len(row) != dim:
            raise ValueError(f"ragged points row {row!r}")
        flat.extend(float(v) for v in row)
    return flat, dim


def kmeans_assign(ctx):
    points, dim = parse_points(_read_inputs(ctx))
    centroids = [list(map(float, c)) for c in ctx.params["centroids"]]
    if dim == 0:
        dim = len(centroids[0])
    flat_c = array("d", [v for c in centroids for v in c])
    sums, counts, sse = accel.kmeans_assign(points, dim, flat_c)
    with open(os.path.join(ctx.output_dir, "partial.json"), "w") as fh:
        json.dump({"dim": dim, "sums": list(sums), "counts": list(counts), "sse": sse}, fh)


def combine_partials(partials, centroids):
    """Fold partial sums into new centroids; empty clusters keep their old position."""
    k = len(centroids)
    dim = len(centroids[0])
    sums = [0.0] * (k * dim)
    counts = [0] * k
    sse = 0.0
    for part in partials:
        for i, v in enumerate(part["sums"]):
            sums[i] += v
        for c, n in enumerate(part["counts"]):
            counts[c] += n
        sse += part["sse"]
    new = []
    for c in range(k):
        if counts[c]:
            new.append([sums[c * dim + j] / counts[c] for j in range(dim)])
        else:
            new.append(list(centroids[c]))
    shift = max(
        sum((a - b) ** 2 for a, b in zip(old, cur)) ** 0.5 for old, cur in zip(centroids, new))
    return new, shift, sse


def kmeans_update(ctx):
    partials = []
    for path in ctx.input_files():
        with open(path) as fh:
            partials.append(json.load(fh))
    centroids = [list(map(float, c)) for c in ctx.params["centroids"]]
    new, shift, sse = combine_partials(partials, centroids)
    with open(os.path.join(ctx.output_dir, "centroids.json"), "w") as fh:
        json.dump({"centroids": new, "shift": shift, "sse": sse}, fh)


BUILTINS: Dict[str, Callable[[KernelContext], None]] = {
    "sleep": sleep,
    "busy_spin": busy_spin,
    "noop": noop,
    "wordcount_map": wordcount_map,
    "wordcount_reduce": wordcount_reduce,
    "kmeans_assign": kmeans_assign,
    "kmeans_update": kmeans_update,
    "stream_produce": stream_produce,
    "stream_consume": stream_consume,
}

__all__ = ["Broker", "BUILTINS", "KernelContext", "SIM_EXECUTED", "accel", "run_kernel"]
