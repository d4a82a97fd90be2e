"""Backend selection for the finite-volume kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation is used. Setting ``ROMFBK_PURE_PYTHON=1`` forces the fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_NAMES = ("advect", "advect_adjoint", "laplacian", "sym_dot", "cg_solve")
BACKEND = "python"


def available_backends() -> list:
    return ["python"] + (["cython"] if _compiled is not None else [])


def use_backend(name: str) -> None:
    """Switch every kernel of this module to ``"cython"`` or ``"python"``."""
    global BACKEND
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        impl = _compiled
    elif name == "python":
        impl = _kernels_py
    else:
        raise ValueError(f"unknown backend {name!r}")
    g = globals()
    for n in _NAMES:
        g[n] = getattr(impl, n)
    BACKEND = name


_forced = os.environ.get("ROMFBK_PURE_PYTHON", "") not in ("", "0")
use_backend("cython" if _compiled is not None and not _forced else "python")

__all__ = ["BACKEND", "available_backends", "use_backend", *_NAMES]
