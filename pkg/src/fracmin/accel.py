"""Backend switch for the lattice kernels.

Set ``FRACMIN_NUMBA=0`` to force the pure-numpy code paths; the choice is
read at import time and can be overridden with :func:`set_backend`.
"""
import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

ENV_FLAG = "FRACMIN_NUMBA"


def _env_wants_numba():
    return os.environ.get(ENV_FLAG, "1").strip().lower() not in ("0", "false", "no", "off")


USE_NUMBA = HAVE_NUMBA and _env_wants_numba()


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"`` for subsequent kernel calls."""
    global USE_NUMBA
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    USE_NUMBA = name == "numba"


def backend():
    return "numba" if USE_NUMBA else "numpy"


def njit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)
