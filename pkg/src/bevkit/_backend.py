"""Kernel backend selection: numba JIT paths with a pure-numpy fallback.

The env var BEVKIT_NUMBA picks the path:
  auto (default)  use numba when importable
  0 / off / false force the numpy fallback
  1 / on / true   require numba (raise if unavailable)
Call sites may also pass backend="numba" / "numpy" explicitly, which
overrides the env var.  Both paths accumulate in the same element order,
so results are bit-identical either way.
"""

from __future__ import annotations

import os

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False
    prange = range

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


ENV_VAR = "BEVKIT_NUMBA"
_OFF = {"0", "off", "false", "no"}
_ON = {"1", "on", "true", "yes"}


def use_numba(backend: str | None = None) -> bool:
    """Resolve the active backend; see module docstring for the rules."""
    if backend is not None:
        if backend == "numpy":
            return False
        if backend == "numba":
            if not HAVE_NUMBA:
                raise RuntimeError("numba backend requested but numba is not installed")
            return True
        if backend != "auto":
            raise ValueError(f"unknown backend {backend!r}")
    env = os.environ.get(ENV_VAR, "auto").strip().lower()
    if env in _OFF:
        return False
    if env in _ON:
        if not HAVE_NUMBA:
            raise RuntimeError(f"{ENV_VAR}={env} but numba is not installed")
        return True
    return HAVE_NUMBA


def set_threads(n: int) -> int:
    """Clamp n to numba's thread-pool limit and apply it; returns the
    effective count.  A no-op (returning 1) on the numpy fallback."""
    if not HAVE_NUMBA:
        return 1
    limit = numba.config.NUMBA_NUM_THREADS
    effective = max(1, min(int(n), limit))
    numba.set_num_threads(effective)
    return effective
