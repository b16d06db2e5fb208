"""Numba dispatch switch.

Kernels are compiled with numba when it is importable and the environment
variable ``RELSCENE_DISABLE_NUMBA`` is unset (or ``0``). Otherwise the
pure-numpy implementations are used.
"""

import os

ENV_FLAG = "RELSCENE_DISABLE_NUMBA"


def _noop_jit(*args, **kwargs):
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def decorator(func):
        return func

    return decorator


try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = _noop_jit
    HAVE_NUMBA = False


def numba_enabled() -> bool:
    """True when the compiled kernels should be used."""
    if not HAVE_NUMBA:
        return False
    return os.environ.get(ENV_FLAG, "0").strip().lower() in ("", "0", "false", "no")
