"""Backend switch for the hot kernels.

Set ``SKG_BACKEND=numpy`` to force the pure-numpy code paths; anything else
(or unset) uses numba when it is importable.
"""
import contextlib
import os

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

_use_numba = HAVE_NUMBA and os.environ.get("SKG_BACKEND", "numba").strip().lower() != "numpy"


def njit(func):
    """Compile ``func`` in nopython mode, or return it untouched without numba."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)


def backend():
    return "numba" if _use_numba else "numpy"


def set_backend(name):
    global _use_numba
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _use_numba = name == "numba"


@contextlib.contextmanager
def use_backend(name):
    old = backend()
    set_backend(name)
    try:
        yield
    finally:
        set_backend(old)
