"""Backend switch for the numba-compiled kernels.

Set ``HTGN_DISABLE_NUMBA=1`` to force the pure numpy/python paths.  The
active backend can also be flipped at runtime with :func:`set_backend`,
which is what the test-suite and the benchmark script do.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional speedup
    numba = None

HAVE_NUMBA = numba is not None

_state = {
    "use_numba": HAVE_NUMBA
    and os.environ.get("HTGN_DISABLE_NUMBA", "").strip().lower() not in ("1", "true", "yes", "on")
}


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity otherwise."""
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


def use_numba() -> bool:
    return _state["use_numba"]


def set_backend(name: str) -> str:
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend name."""
    prev = backend()
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba is not installed")
        _state["use_numba"] = True
    elif name == "numpy":
        _state["use_numba"] = False
    else:
        raise ValueError(f"unknown backend {name!r}")
    return prev


def backend() -> str:
    return "numba" if _state["use_numba"] else "numpy"
