"""Pure-Python hot kernels. Semantics (and float operation order) match ``_speedups``."""
from collections import Counter

IMPLEMENTATION = "python"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a64(word: bytes) -> int:
    h = _FNV_OFFSET
    for b in word:
        h = ((h ^ b) * _FNV_PRIME) & _MASK
    return h


def count_tokens(data: bytes) -> dict:
    """Count ASCII-whitespace separated tokens."""
    return dict(Counter(bytes(data).split()))


def partition_counts(counts: dict, n_partitions: int) -> list:
    """Split ``counts`` into ``n_partitions`` dicts by FNV-1a hash of the key."""
    parts = [{} for _ in range(n_partitions)]
    for word, n in counts.items():
        parts[fnv1a64(word) % n_partitions][word] = n
    return parts


def kmeans_assign(points, dim: int, centroids):
    """Nearest-centroid assignment over flat row-major buffers.

    Returns per-centroid coordinate sums (flat), member counts and the sum
    of squared distances. Ties go to the lowest centroid index.
    """
    n = len(points) // dim if dim else 0
    k = len(centroids) // dim if dim else 0
    if k == 0 and n:
        raise ValueError("no centroids")
    sums = [0.0] * (k * dim)
    counts = [0] * k
    sse = 0.0
    for i in range(n):
        base = i * dim
        best = -1
        best_d = 0.0
        for c in range(k):
            cb = c * dim
            d = 0.0
            for j in range(dim):
                diff = points[base + j] - centroids[cb + j]
                d += diff * diff
            if best < 0 or d < best_d:
                best = c
                best_d = d
        cb = best * dim
        for j in range(dim):
            sums[cb + j] += points[base + j]
        counts[best] += 1
        sse += best_d
    return sums, counts, sse
