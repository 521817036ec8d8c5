"""Kernel backend selection.

RFKIT_BACKEND picks the implementation of the hot loops in _kernels:
  auto   use numba when importable, else numpy (default)
  numba  require numba, raise if missing
  numpy  force the pure-numpy fallbacks

The choice is resolved once per process (first use) and cached; tests may call
reset() after monkeypatching the environment.
"""

import os

from .errors import DataError

try:
    import numba  # noqa: F401
    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

_ACTIVE = None


def resolve():
    mode = os.environ.get("RFKIT_BACKEND", "auto").strip().lower()
    if mode not in ("auto", "numba", "numpy"):
        raise DataError(f"RFKIT_BACKEND must be auto, numba or numpy, got {mode!r}")
    if mode == "numpy":
        return "numpy"
    if mode == "numba":
        if not HAS_NUMBA:
            raise DataError("RFKIT_BACKEND=numba but numba is not importable")
        return "numba"
    return "numba" if HAS_NUMBA else "numpy"


def active():
    global _ACTIVE
    if _ACTIVE is None:
        _ACTIVE = resolve()
    return _ACTIVE


def reset():
    global _ACTIVE
    _ACTIVE = None


def n_threads():
    """Worker cap for grid/benchmark pools, from RFKIT_THREADS (default 1)."""
    raw = os.environ.get("RFKIT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise DataError(f"RFKIT_THREADS must be an integer, got {raw!r}")
    return max(1, n)
