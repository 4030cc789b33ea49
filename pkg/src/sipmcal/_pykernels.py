"""Pure numpy implementation of the pmf composition kernel."""

from __future__ import annotations

import numpy as np


def compose(p: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Coefficients of G(h(z)) where G has coefficients ``p``."""
    p = np.ascontiguousarray(p, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    out = p[-1:].copy()
    for coef in p[-2::-1]:
        out = np.convolve(out, h)
        out[0] += coef
    return out
