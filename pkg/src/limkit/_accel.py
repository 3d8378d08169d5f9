"""Numba availability and the env switch that forces the pure-numpy kernels.

Set ``LIMKIT_DISABLE_NUMBA=1`` before import to run every hot kernel through
its numpy fallback. Both paths are required to produce identical forward
values; the test suite runs them side by side.
"""

import os

_DISABLED = os.environ.get("LIMKIT_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and not _DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity decorator otherwise."""
    if NUMBA_AVAILABLE:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)

    def wrap(fn):
        return fn

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrap


def default_backend():
    return "numba" if USE_NUMBA else "numpy"


def resolve_backend(backend):
    if backend is None:
        return default_backend()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {backend!r}; expected 'numba' or 'numpy'")
    if backend == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend
