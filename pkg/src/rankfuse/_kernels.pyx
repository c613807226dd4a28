# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. ``_fallback`` mirrors every function here."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def rank_hinge(const double[::1] scores):
    """Sum of pairwise hinge terms over q > t and per-position pair counts.

    Returns ``(total, coef)`` where ``total = sum max(0, 1 - s[q] + s[t])``
    and ``coef[i]`` counts active pairs with ``i`` as the later element
    minus active pairs with ``i`` as the earlier element.
    """
    cdef Py_ssize_t n = scores.shape[0]
    cdef Py_ssize_t q, t
    cdef double total = 0.0
    cdef double margin, sq
    coef_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] coef = coef_arr
    for q in range(1, n):
        sq = scores[q]
        for t in range(q):
            margin = 1.0 - sq + scores[t]
            if margin > 0.0:
                total += margin
                coef[q] += 1.0
                coef[t] -= 1.0
    return total, coef_arr


def maxpool2x2_forward(const double[:, :, :, ::1] x):
    """2x2 max pool with stride 1 over axes 1 and 2 of an (N, W, H, C) array."""
    cdef Py_ssize_t n = x.shape[0], w = x.shape[1], h = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t ow = w - 1, oh = h - 1
    cdef Py_ssize_t i, a, b, k
    cdef double best, v
    cdef signed char arg
    out_arr = np.empty((n, ow, oh, c), dtype=np.float64)
    idx_arr = np.empty((n, ow, oh, c), dtype=np.int8)
    cdef double[:, :, :, ::1] out = out_arr
    cdef signed char[:, :, :, ::1] idx = idx_arr
    for i in range(n):
        for a in range(ow):
            for b in range(oh):
                for k in range(c):
                    best = x[i, a, b, k]
                    arg = 0
                    v = x[i, a, b + 1, k]
                    if v > best:
                        best = v
                        arg = 1
                    v = x[i, a + 1, b, k]
                    if v > best:
                        best = v
                        arg = 2
                    v = x[i, a + 1, b + 1, k]
                    if v > best:
                        best = v
                        arg = 3
                    out[i, a, b, k] = best
                    idx[i, a, b, k] = arg
    return out_arr, idx_arr


def maxpool2x2_backward(const double[:, :, :, ::1] grad_out,
                        const signed char[:, :, :, ::1] idx):
    cdef Py_ssize_t n = grad_out.shape[0], ow = grad_out.shape[1]
    cdef Py_ssize_t oh = grad_out.shape[2], c = grad_out.shape[3]
    cdef Py_ssize_t i, a, b, k
    cdef signed char arg
    grad_arr = np.zeros((n, ow + 1, oh + 1, c), dtype=np.float64)
    cdef double[:, :, :, ::1] grad = grad_arr
    for i in range(n):
        for a in range(ow):
            for b in range(oh):
                for k in range(c):
                    arg = idx[i, a, b, k]
                    grad[i, a + (arg >> 1), b + (arg & 1), k] += grad_out[i, a, b, k]
    return grad_arr
