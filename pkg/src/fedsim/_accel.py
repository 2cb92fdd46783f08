"""Optional numba acceleration for the hot kernels.

Set ``FEDSIM_DISABLE_NUMBA=1`` to run every kernel as plain Python/NumPy.
Both paths execute the same source, so results are float-identical.
"""

import functools
import os

_FLAG = "FEDSIM_DISABLE_NUMBA"


def _numba_requested():
    return os.environ.get(_FLAG, "").strip().lower() not in {"1", "true", "yes", "on"}


try:
    if not _numba_requested():
        raise ImportError("numba disabled by %s" % _FLAG)
    import numba

    NUMBA_ENABLED = True
    jit = functools.partial(numba.njit, cache=True, nogil=True)
except ImportError:
    numba = None
    NUMBA_ENABLED = False

    def jit(func=None, **_ignored):
        if func is None:
            return lambda f: f
        return func


def python_impl(kernel):
    """Return the uncompiled Python function behind ``kernel``."""
    return getattr(kernel, "py_func", kernel)
