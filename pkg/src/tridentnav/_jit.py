"""Kernel compilation switch.

Hot loops are written in the numba-compatible numpy subset and wrapped with
:func:`kernel`. Setting ``TRIDENTNAV_DISABLE_JIT=1`` before import runs the
same source as plain Python/numpy, which is slower but produces the same
numbers up to floating-point reassociation.
"""
import os

_FALSE = {"", "0", "false", "no", "off"}

JIT_ENABLED = os.environ.get("TRIDENTNAV_DISABLE_JIT", "").strip().lower() in _FALSE

if JIT_ENABLED:
    try:
        import numba
    except ImportError:  # pragma: no cover - numba is a declared dependency
        JIT_ENABLED = False


def kernel(func):
    """Compile ``func`` with ``numba.njit`` unless JIT is disabled."""
    if JIT_ENABLED:
        return numba.njit(cache=True)(func)
    return func


def python_impl(func):
    """Return the uncompiled Python function behind a kernel."""
    return getattr(func, "py_func", func)
