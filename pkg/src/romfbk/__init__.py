"""Deep-learning reduced-order feedback control of Fokker-Planck density transport."""
from __future__ import annotations

from . import kernels

__version__ = "0.1.0"
__all__ = ["kernels", "__version__"]
