# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled scoring loops. Semantics mirror ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def scan_max(const double complex[:, ::1] U, const double complex[:, ::1] V):
    """Per row of U: max over rows v of V of |v^H u|^2, and the first argmax."""
    cdef Py_ssize_t n = U.shape[0], m = U.shape[1], K = V.shape[0]
    cdef Py_ssize_t i, k, j
    cdef double ur, ui, e, best
    cdef Py_ssize_t arg
    if V.shape[1] != m:
        raise ValueError("template length does not match observation length")
    if K == 0:
        raise ValueError("empty template grid")
    Va = np.asarray(V)
    # templates transposed to (m, K) with split parts so the k loop vectorizes
    cdef double[:, ::1] vr = np.ascontiguousarray(Va.real.T)
    cdef double[:, ::1] vi = np.ascontiguousarray(Va.imag.T)
    cdef double[::1] acc_re = np.empty(K)
    cdef double[::1] acc_im = np.empty(K)
    out = np.empty(n, dtype=np.float64)
    idx = np.empty(n, dtype=np.intp)
    cdef double[::1] out_v = out
    cdef Py_ssize_t[::1] idx_v = idx
    with nogil:
        for i in range(n):
            for k in range(K):
                acc_re[k] = 0.0
                acc_im[k] = 0.0
            for j in range(m):
                ur = U[i, j].real
                ui = U[i, j].imag
                # conj(v) * u
                for k in range(K):
                    acc_re[k] = acc_re[k] + vr[j, k] * ur + vi[j, k] * ui
                    acc_im[k] = acc_im[k] + vr[j, k] * ui - vi[j, k] * ur
            best = -1.0
            arg = 0
            for k in range(K):
                e = acc_re[k] * acc_re[k] + acc_im[k] * acc_im[k]
                if e > best:
                    best = e
                    arg = k
            out_v[i] = best
            idx_v[i] = arg
    return out, idx


def row_energy(const double complex[:, ::1] U, const double complex[:, ::1] W):
    """Per row: |w_i^H u_i|^2."""
    cdef Py_ssize_t n = U.shape[0], m = U.shape[1]
    cdef Py_ssize_t i, j
    cdef double re, im, ur, ui, vr, vi
    if W.shape[0] != n or W.shape[1] != m:
        raise ValueError("template array must match observation array shape")
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] out_v = out
    with nogil:
        for i in range(n):
            re = 0.0
            im = 0.0
            for j in range(m):
                ur = U[i, j].real
                ui = U[i, j].imag
                vr = W[i, j].real
                vi = W[i, j].imag
                re = re + vr * ur + vi * ui
                im = im + vr * ui - vi * ur
            out_v[i] = re * re + im * im
    return out
