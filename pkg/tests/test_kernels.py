import os
import subprocess
import sys
from array import array
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pilotkit.core import EventLog
from pilotkit.kernels import _pure, accel, split_lines
from pilotkit.kernels.stream import Broker

try:
    from pilotkit.kernels import _speedups
except ImportError:  # extension not built
    _speedups = None

IMPLS = [_pure] + ([_speedups] if _speedups is not None else [])
needs_ext = pytest.mark.skipif(_speedups is None, reason="compiled extension not built")

words = st.binary(max_size=12).filter(lambda w: w and not any(c in b" \t\n\r\x0b\x0c" for c in w))
texts = st.lists(st.tuples(words, st.sampled_from([b" ", b"\n", b"\t", b"  ", b"\r\n"])), max_size=60).map(
    lambda pairs: b"".join(w + s for w, s in pairs))


@pytest.mark.parametrize("impl", IMPLS)
def test_fnv1a64_reference_vectors(impl):
    assert impl.fnv1a64(b"") == 0xCBF29CE484222325
    assert impl.fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert impl.fnv1a64(b"foobar") == 0x85944171F73967E8


@pytest.mark.parametrize("impl", IMPLS)
def test_count_tokens_matches_counter(impl):
    data = b"a b a\n\tc  a\r\n"
    assert impl.count_tokens(data) == {b"a": 3, b"b": 1, b"c": 1}
    assert impl.count_tokens(b"") == {}


@needs_ext
@settings(max_examples=300)
@given(texts)
def test_compiled_and_pure_token_counts_agree(data):
    expected = dict(Counter(data.split()))
    assert _pure.count_tokens(data) == expected
    assert _speedups.count_tokens(data) == expected


@needs_ext
@settings(max_examples=200)
@given(st.dictionaries(words, st.integers(1, 10**6), max_size=40), st.integers(1, 7))
def test_partitions_agree(counts, n):
    a = _pure.partition_counts(counts, n)
    b = _speedups.partition_counts(counts, n)
    assert a == b
    merged = {}
    for part in a:
        assert not set(part) & set(merged)
        merged.update(part)
    assert merged == counts


def brute_assign(points, dim, cents):
    k = len(cents) // dim
    sums, counts, sse = [0.0] * len(cents), [0] * k, 0.0
    for i in range(0, len(points), dim):
        p = points[i:i + dim]
        ds = [sum((p[j] - cents[c * dim + j]) ** 2 for j in range(dim)) for c in range(k)]
        best = ds.index(min(ds))
        for j in range(dim):
            sums[best * dim + j] += p[j]
        counts[best] += 1
        sse += ds[best]
    return sums, counts, sse


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=200)
@given(st.integers(1, 3).flatmap(lambda dim: st.tuples(
    st.just(dim),
    st.lists(finite, max_size=30).map(lambda v: v[:len(v) - len(v) % dim]),
    st.lists(finite, min_size=dim, max_size=4 * dim).map(lambda v: v[:len(v) - len(v) % dim]))))
def test_kmeans_assign_agrees_with_brute_force(case):
    dim, pts, cents = case
    expected = brute_assign(pts, dim, cents)
    for impl in IMPLS:
        sums, counts, sse = impl.kmeans_assign(array("d", pts), dim, array("d", cents))
        assert list(counts) == expected[1]
        assert list(sums) == pytest.approx(expected[0], rel=1e-12, abs=1e-9)
        assert sse == pytest.approx(expected[2], rel=1e-12, abs=1e-9)
    if _speedups is not None:
        # same float operation order, so the results are bit-identical
        a = _pure.kmeans_assign(array("d", pts), dim, array("d", cents))
        b = _speedups.kmeans_assign(array("d", pts), dim, array("d", cents))
        assert (list(a[0]), list(a[1]), a[2]) == (list(b[0]), list(b[1]), b[2])


def test_accel_picks_compiled_when_available():
    compiled = _speedups is not None and os.environ.get("PILOTKIT_PURE") != "1"
    assert accel.IMPLEMENTATION == ("cython" if compiled else "python")


def test_pure_fallback_env_switch():
    code = "from pilotkit.kernels import accel; print(accel.IMPLEMENTATION)"
    out = subprocess.run([sys.executable, "-c", code], env={**os.environ, "PILOTKIT_PURE": "1"},
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@settings(max_examples=100)
@given(st.lists(st.binary(max_size=20).map(lambda b: b.replace(b"\n", b"")), max_size=30), st.integers(1, 6))
def test_split_lines_covers_every_line_once(lines, n):
    data = b"".join(line + b"\n" for line in lines)
    parts = [split_lines(data, i, n) for i in range(n)]
    assert b"".join(parts) == data


def test_broker_bounded_queue_drops_and_counts():
    log = EventLog()
    broker = Broker("b", log, bound=2)
    for i in range(4):
        broker.publish(i, ts=i)
    assert (broker.produced, broker.dropped) == (4, 2)
    assert broker.take("c", ts=10) == 2
    assert broker.latencies == [10, 9]
    assert not broker.drained()
    broker.producer_finished()
    assert broker.drained()
    kinds = Counter(r.event for r in log.records)
    assert kinds == {"MSG_PRODUCED": 4, "MSG_DROPPED": 2, "MSG_CONSUMED": 2}


@needs_ext
def test_benchmark_script_runs(capsys):
    bench = os.path.join(os.path.dirname(__file__), os.pardir, "benchmarks", "bench_kernels.py")
    out = subprocess.run([sys.executable, bench, "--repeat", "1", "--size", "4096"],
                         capture_output=True, text=True, check=True)
    assert "kmeans_assign" in out.stdout and "speedup" in out.stdout
