"""Numba acceleration plumbing.

Hot kernels are written twice: a numba ``@njit`` version and a pure-numpy
fallback.  Selection happens once at import time:

* ``SPDELAB_DISABLE_NUMBA=1`` in the environment forces the numpy path;
* if numba is not importable the numpy path is used silently.

``jit_or_fallback`` decorates the numba candidates; when the numpy path is
active it returns the function untouched so the module still imports.
"""

import os

_DISABLE = os.environ.get("SPDELAB_DISABLE_NUMBA", "").strip().lower() in (
    "1", "true", "yes", "on",
)

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag instead
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _DISABLE


def jit_or_fallback(func=None, **kwargs):
    """``numba.njit`` when the numba path is active, identity otherwise."""

    def wrap(f):
        if USE_NUMBA:
            kwargs.setdefault("cache", True)
            return numba.njit(**kwargs)(f)
        return f

    if func is not None:
        return wrap(func)
    return wrap


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
