"""Independent reference implementations the tests compare against.

Nothing here imports the scheduler, the kernels or the drivers; each oracle
is written from the rules directly, in the most literal way available.
"""
from __future__ import annotations

import math
from collections import Counter
from typing import Dict, List, Sequence, Tuple

# (state, event) -> successor, written out by hand
PILOT_TABLE = {
    ("NEW", "submit"): "SUBMITTED",
    ("SUBMITTED", "queue"): "QUEUED",
    ("SUBMITTED", "fail"): "FAILED",
    ("SUBMITTED", "cancel"): "CANCELED",
    ("QUEUED", "activate"): "ACTIVE",
    ("QUEUED", "fail"): "FAILED",
    ("QUEUED", "cancel"): "CANCELED",
    ("ACTIVE", "complete"): "DONE",
    ("ACTIVE", "fail"): "FAILED",
    ("ACTIVE", "cancel"): "CANCELED",
}
UNIT_TABLE = {
    ("NEW", "submit"): "PENDING",
    ("PENDING", "bind"): "BOUND",
    ("PENDING", "cancel"): "CANCELED",
    ("BOUND", "run"): "RUNNING",
    ("BOUND", "cancel"): "CANCELED",
    ("RUNNING", "complete"): "DONE",
    ("RUNNING", "fail"): "FAILED",
    ("RUNNING", "cancel"): "CANCELED",
}


def list_schedule(durations_ms: Sequence[int], pilots: Sequence[int],
                  deps: Dict[int, Sequence[int]] = None, tick: int = None) -> int:
    """Time-stepped FIFO list scheduler; returns the makespan.

    At every tick finished units free their slots first, then pending units
    whose dependencies are done are started in submission order on the
    first pilot (in the given order) with a free slot. Durations must be
    multiples of ``tick``.
    """
    deps = deps or {}
    n = len(durations_ms)
    if n == 0:
        return 0
    if tick is None:
        tick = 0
        for d in durations_ms:
            tick = math.gcd(tick, int(d))
        tick = tick or 1
    free = [list(range(s)) for s in pilots]
    running: List[Tuple[int, int, int, int]] = []  # (end, unit, pilot, slot)
    done = set()
    pending = list(range(n))
    t = 0
    last = 0
    while pending or running:
        for item in [r for r in running if r[0] == t]:
            running.remove(item)
            done.add(item[1])
            free[item[2]].append(item[3])
            last = t
        progress = True
        while progress:
            progress = False
            for u in list(pending):
                if not all(d in done for d in deps.get(u, ())):
                    continue
                p = next((i for i, f in enumerate(free) if f), None)
                if p is None:
                    break
                slot = min(free[p])
                free[p].remove(slot)
                pending.remove(u)
                if durations_ms[u] == 0:
                    done.add(u)
                    free[p].append(slot)
                    progress = True
                else:
                    running.append((t + int(durations_ms[u]), u, p, slot))
        if not pending and not running:
            break
        if pending and not running:
            raise ValueError("oracle deadlock: dependencies can never be met")
        t += tick
    return last


def wordcount_tsv(data: bytes) -> bytes:
    """Sorted ``word<TAB>count`` lines over ASCII-whitespace tokens."""
    counts = Counter(data.split())
    return b"".join(w + b"\t" + str(c).encode() + b"\n" for w, c in sorted(counts.items()))


def lloyd(points: Sequence[Sequence[float]], k: int, max_iters: int = 100,
          epsilon: float = 1e-12) -> List[List[float]]:
    """Plain serial Lloyd's algorithm seeded with the first k distinct points."""
    seen: List[Tuple[float, ...]] = []
    for p in points:
        if tuple(p) not in seen:
            seen.append(tuple(p))
        if len(seen) == k:
            break
    cents = [list(p) for p in seen]
    for _ in range(max_iters):
        groups = [[] for _ in cents]
        for p in points:
            dists = [sum((a - b) ** 2 for a, b in zip(p, c)) for c in cents]
            groups[dists.index(min(dists))].append(p)
        new = []
        for c, g in zip(cents, groups):
            if g:
                new.append([sum(col) / len(g) for col in zip(*g)])
            else:
                new.append(list(c))
        shift = max(math.dist(a, b) for a, b in zip(cents, new))
        cents = new
        if shift < epsilon:
            break
    return cents


def nearest_rank(values: Sequence[float], q: float):
    if not values:
        return None
    s = sorted(values)
    return s[max(1, math.ceil(q / 100.0 * len(s))) - 1]
