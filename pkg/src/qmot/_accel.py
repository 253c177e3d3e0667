"""Optional numba acceleration.

Set ``QMOT_DISABLE_NUMBA=1`` to force the pure-numpy kernels. The flag is read
at call time so tests and benchmarks can switch paths within one process.
"""
import os

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
    if not os.environ.get("NUMBA_THREADING_LAYER"):
        # skip probing an outdated TBB, which only produces a warning
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False
    prange = range

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorator(func):
            return func

        return decorator


ENV_FLAG = "QMOT_DISABLE_NUMBA"


def numba_enabled() -> bool:
    if not HAVE_NUMBA:
        return False
    return os.environ.get(ENV_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


def set_threads(n: int | None) -> None:
    """Cap the numba worker pool; a no-op without numba."""
    if n is None or not HAVE_NUMBA:
        return
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
