# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled pmf composition kernel."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def compose(const double[::1] p, const double[::1] h):
    """Coefficients of G(h(z)) where G has coefficients ``p``.

    Horner evaluation in polynomial arithmetic; every term is non-negative so
    the recursion carries no cancellation.
    """
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t d = h.shape[0] - 1
    cdef Py_ssize_t size = (n - 1) * d + 1
    cdef Py_ssize_t length, i, j, step
    cdef double acc
    out_arr = np.zeros(size, dtype=np.float64)
    tmp_arr = np.zeros(size, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[::1] tmp = tmp_arr
    cdef double[::1] swap

    out[0] = p[n - 1]
    length = 1
    for step in range(n - 2, -1, -1):
        for i in range(length + d):
            tmp[i] = 0.0
        # long axis innermost and branch-free so the compiler can vectorise
        for j in range(d + 1):
            acc = h[j]
            if acc == 0.0:
                continue
            for i in range(length):
                tmp[i + j] += out[i] * acc
        length += d
        tmp[0] += p[step]
        swap = out
        out = tmp
        tmp = swap
    return np.asarray(out)[:size].copy()
