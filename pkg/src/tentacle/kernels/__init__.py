"""Backend selection for the time-stepping kernels.

The compiled extension ``_core`` is used when it imports; otherwise the
NumPy implementation in ``_fallback`` takes over. Setting the environment
variable ``TENTACLE_BACKEND=python`` forces the fallback.
"""

import os

from . import _fallback
from ._fallback import DIAG_COLUMNS, NO_CONVERGENCE, OK, SINGULAR

BACKEND = "python"
_impl = _fallback

if os.environ.get("TENTACLE_BACKEND", "").lower() != "python":
    try:
        from . import _core
    except ImportError:  # extension not built
        pass
    else:
        _impl = _core
        BACKEND = "compiled"


def get_backend(name=None):
    """Return the kernel module for ``name`` ("compiled", "python" or None for the active one)."""
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "compiled":
        from . import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")


def forward_run(*args, backend=None):
    return get_backend(backend).forward_run(*args)


def adjoint_run(*args, backend=None):
    return get_backend(backend).adjoint_run(*args)


__all__ = [
    "BACKEND",
    "DIAG_COLUMNS",
    "NO_CONVERGENCE",
    "OK",
    "SINGULAR",
    "adjoint_run",
    "forward_run",
    "get_backend",
]
