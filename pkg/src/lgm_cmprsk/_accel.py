"""Backend selection for the compiled kernels.

Set ``LGM_CMPRSK_NUMBA=0`` to run the pure-numpy fallback paths; the
same happens automatically when numba cannot be imported.
"""

import os

try:
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False
    _njit = None

_FLAG = os.environ.get("LGM_CMPRSK_NUMBA", "1").strip().lower()
_use_numba = HAS_NUMBA and _FLAG not in ("0", "false", "no", "off")


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAS_NUMBA:
        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def use_numba() -> bool:
    return _use_numba


def set_backend(name: str) -> None:
    """Switch between ``"numba"`` and ``"numpy"`` at runtime (benchmarks, tests)."""
    global _use_numba
    if name == "numba":
        if not HAS_NUMBA:
            raise RuntimeError("numba is not installed")
        _use_numba = True
    elif name == "numpy":
        _use_numba = False
    else:
        raise ValueError(f"unknown backend {name!r}")


def backend() -> str:
    return "numba" if _use_numba else "numpy"
