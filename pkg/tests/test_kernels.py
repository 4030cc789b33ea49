from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.polynomial import polynomial as P

from sipmcal import _pykernels, kernels
from sipmcal.errors import DomainError

coeffs = st.lists(st.floats(-2.0, 2.0), min_size=1, max_size=30)


def compose_oracle(p, h):
    # sum_n p_n h(z)^n with numpy's polynomial power
    out = np.zeros(1)
    for n, c in enumerate(p):
        term = c * P.polypow(h, n) if n else np.array([c])
        out = P.polyadd(out, term)
    return out


@given(coeffs, st.lists(st.floats(-2.0, 2.0), min_size=1, max_size=5))
def test_python_backend_matches_polynomial_powers(p, h):
    got = _pykernels.compose(p, h)
    ref = compose_oracle(p, h)
    n = max(got.size, ref.size)
    np.testing.assert_allclose(np.pad(got, (0, n - got.size)), np.pad(ref, (0, n - ref.size)), atol=1e-9)


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled extension not built")
@given(coeffs, st.lists(st.floats(-2.0, 2.0), min_size=1, max_size=5))
def test_backends_agree(p, h):
    from sipmcal import _ckernels

    a = _ckernels.compose(np.asarray(p, float), np.asarray(h, float))
    b = _pykernels.compose(p, h)
    assert a.shape == b.shape
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_wrapper_accepts_sequences():
    np.testing.assert_allclose(kernels.compose([0.0, 1.0], [0.3, 0.7]), [0.3, 0.7])


@pytest.mark.parametrize("p, h", [([], [1.0]), ([1.0], []), ([[1.0]], [1.0])])
def test_wrapper_rejects_bad_shapes(p, h):
    with pytest.raises(DomainError):
        kernels.compose(p, h)


def test_backend_name():
    assert kernels.BACKEND in ("cython", "python")
