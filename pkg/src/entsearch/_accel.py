"""Numba availability switch.

Set ``ENTSEARCH_NO_NUMBA=1`` to force the pure-numpy kernels. When numba is
not importable the numpy path is used regardless.
"""
import os

_DISABLED = os.environ.get("ENTSEARCH_NO_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn


USE_NUMBA = HAVE_NUMBA and not _DISABLED
