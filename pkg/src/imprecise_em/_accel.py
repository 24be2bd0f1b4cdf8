"""JIT switch for the hot kernels.

Set ``IMPRECISE_EM_DISABLE_NUMBA=1`` (or numba's own ``NUMBA_DISABLE_JIT=1``)
to run the pure-numpy kernels instead.
"""

import os

_FALSY = ("", "0", "false", "no", "off")


def _flag(name):
    return os.environ.get(name, "").strip().lower() not in _FALSY


try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = (
    numba is not None
    and not _flag("IMPRECISE_EM_DISABLE_NUMBA")
    and not _flag("NUMBA_DISABLE_JIT")
)

NUMBA_OPTS = {"nopython": True, "cache": True, "nogil": True}


def njit(func):
    """Compile ``func`` with numba when available; otherwise return it as-is."""
    if numba is None:
        return func
    return numba.jit(**NUMBA_OPTS)(func)
