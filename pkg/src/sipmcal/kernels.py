"""Backend selection for the hot pmf kernels.

The compiled extension is used when it was built at install time; otherwise
the numpy implementation is used. ``BACKEND`` names the active one.
"""

from __future__ import annotations

import numpy as np

from . import _pykernels
from .errors import DomainError

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKEND = "cython" if _ckernels is not None else "python"
_compose = _ckernels.compose if _ckernels is not None else _pykernels.compose


def compose(p, h) -> np.ndarray:
    """Coefficients of G(h(z)) for coefficient sequences ``p`` (of G) and ``h``."""
    p = np.ascontiguousarray(p, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    if p.ndim != 1 or h.ndim != 1 or p.size == 0 or h.size == 0:
        raise DomainError("compose needs two non-empty one-dimensional coefficient arrays")
    return _compose(p, h)


__all__ = ["compose", "BACKEND"]
