"""Backend selection for the numeric kernels.

Set ``PSOMDP_DISABLE_NUMBA=1`` before import to force the numpy/scipy path.
"""
import os

_FALSY = {"", "0", "false", "no", "off"}


def numba_requested():
    return os.environ.get("PSOMDP_DISABLE_NUMBA", "").strip().lower() in _FALSY


# the bundled TBB is too old for numba; prefer OpenMP unless the caller chose
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and numba_requested()


def set_threads(n):
    """Best-effort thread-count hint for the numba backend."""
    if not (USE_NUMBA and n):
        return
    import numba

    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
