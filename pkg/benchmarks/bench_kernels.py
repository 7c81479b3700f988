"""Compare the compiled kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--size 1048576]

Each kernel is timed on identical inputs under both implementations and the
results are checked for equality before timings are reported.
"""
import argparse
import logging
import random
import sys
import timeit
from array import array

from pilotkit.data import random_text
from pilotkit.kernels import _pure

try:
    from pilotkit.kernels import _speedups
except ImportError:
    _speedups = None

log = logging.getLogger("bench")


def cases(size: int, seed: int):
    text = random_text(size, seed)
    counts = _pure.count_tokens(text)
    rng = random.Random(seed)
    points = array("d", (rng.uniform(-10, 10) for _ in range(2 * 100_000)))
    cents = array("d", (rng.uniform(-10, 10) for _ in range(2 * 8)))
    return {
        "count_tokens": lambda impl: impl.count_tokens(text),
        "partition_counts": lambda impl: impl.partition_counts(counts, 8),
        "kmeans_assign": lambda impl: impl.kmeans_assign(points, 2, cents),
        "fnv1a64": lambda impl: [impl.fnv1a64(w) for w in counts],
    }


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--size", type=int, default=1 << 20, help="corpus size in bytes")
    p.add_argument("--seed", type=int, default=2024)
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    if _speedups is None:
        log.error("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return 1

    print(f"{'kernel':<18}{'pure (ms)':>12}{'cython (ms)':>14}{'speedup':>10}")
    for name, call in cases(args.size, args.seed).items():
        a, b = call(_pure), call(_speedups)
        if name == "kmeans_assign":
            a, b = (list(a[0]), list(a[1]), a[2]), (list(b[0]), list(b[1]), b[2])
        if a != b:
            log.error("%s: implementations disagree", name)
            return 2
        pure = min(timeit.repeat(lambda: call(_pure), number=1, repeat=args.repeat)) * 1000
        fast = min(timeit.repeat(lambda: call(_speedups), number=1, repeat=args.repeat)) * 1000
        print(f"{name:<18}{pure:>12.2f}{fast:>14.2f}{pure / fast:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
