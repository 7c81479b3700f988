"""Pick the compiled kernels when they are built, else the pure-Python ones.

Set ``PILOTKIT_PURE=1`` to force the fallback.
"""
import os

if os.environ.get("PILOTKIT_PURE") == "1":
    from . import _pure as _impl
else:
    try:
        from . import _speedups as _impl
    except ImportError:
        from . import _pure as _impl

IMPLEMENTATION = _impl.IMPLEMENTATION
fnv1a64 = _impl.fnv1a64
count_tokens = _impl.count_tokens
partition_counts = _impl.partition_counts
kmeans_assign = _impl.kmeans_assign
