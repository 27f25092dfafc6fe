"""JIT glue for the hot kernels.

The functions in :mod:`tollsim.kernels` are written in nopython-compatible
style. When numba is importable and ``TOLLSIM_DISABLE_JIT`` is unset they are
compiled with ``@njit``; otherwise the very same functions run as plain
Python over numpy arrays. Because both paths execute identical code (no
fastmath, no reordering), results are bit-identical either way.
"""
import os

DISABLE_ENV = "TOLLSIM_DISABLE_JIT"

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None


def _flag_set(value: str | None) -> bool:
    return (value or "").strip().lower() in ("1", "true", "yes", "on")


JIT_ENABLED = _numba is not None and not _flag_set(os.environ.get(DISABLE_ENV))


def njit(*args, **kwargs):
    """``numba.njit`` when JIT is enabled, identity decorator otherwise."""
    if JIT_ENABLED:
        return _numba.njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda func: func


def py_func(func):
    """Return the uncompiled Python version of a (possibly jitted) kernel."""
    return getattr(func, "py_func", func)
