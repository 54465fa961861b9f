"""Numba switch.

Hot kernels are written once as plain Python loops and compiled with
``numba.njit`` when numba is importable and ``MARTBOUNDS_DISABLE_NUMBA`` is
unset (or ``0``).  Every kernel also has a pure-numpy twin in
:mod:`martbounds.kernels`; the two are required to agree bit-for-bit on hit
counts.
"""

import os

_FALSY = {"", "0", "false", "no", "off"}


def _numba_requested():
    return os.environ.get("MARTBOUNDS_DISABLE_NUMBA", "").strip().lower() in _FALSY


try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _numba_requested()


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        kwargs.setdefault("nogil", True)
        return numba.njit(*args, **kwargs)

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrapper(f):
        return f

    return wrapper


def default_backend():
    return "numba" if USE_NUMBA else "numpy"


def worker_count():
    """Worker threads for Monte Carlo, from ``MARTBOUNDS_WORKERS``."""
    raw = os.environ.get("MARTBOUNDS_WORKERS")
    if raw:
        n = int(raw)
        if n < 1:
            raise ValueError("MARTBOUNDS_WORKERS must be a positive integer")
        return n
    return os.cpu_count() or 1
