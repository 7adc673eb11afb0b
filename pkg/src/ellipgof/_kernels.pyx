# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled basis evaluation; same contract as ``_kernels_py.evaluate_basis``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def evaluate_basis(const double[:, ::1] Y, const double[::1] T,
                   const cnp.intp_t[::1] parent, const cnp.intp_t[::1] var,
                   const cnp.intp_t[::1] harm_ptr, const cnp.intp_t[::1] harm_idx,
                   const double[::1] harm_val, const double[:, ::1] rad_coef,
                   const cnp.intp_t[::1] col_harm, const cnp.intp_t[::1] col_rad):
    cdef Py_ssize_t n = Y.shape[0]
    cdef Py_ssize_t M = parent.shape[0]
    cdef Py_ssize_t nh = harm_ptr.shape[0] - 1
    cdef Py_ssize_t nr = rad_coef.shape[0]
    cdef Py_ssize_t d = rad_coef.shape[1]
    cdef Py_ssize_t p = col_harm.shape[0]
    out_arr = np.empty((n, p), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] mono = np.empty(M, dtype=np.float64)
    cdef double[::1] H = np.empty(nh, dtype=np.float64)
    cdef double[::1] Rad = np.empty(nr, dtype=np.float64)
    cdef Py_ssize_t i, c, h, q, r
    cdef double acc, t
    with nogil:
        for i in range(n):
            mono[0] = 1.0
            for c in range(1, M):
                mono[c] = mono[parent[c]] * Y[i, var[c]]
            for h in range(nh):
                acc = 0.0
                for c in range(harm_ptr[h], harm_ptr[h + 1]):
                    acc = acc + harm_val[c] * mono[harm_idx[c]]
                H[h] = acc
            t = T[i]
            for r in range(nr):
                acc = rad_coef[r, d - 1]
                for q in range(d - 2, -1, -1):
                    acc = acc * t + rad_coef[r, q]
                Rad[r] = acc
            for c in range(p):
                out[i, c] = H[col_harm[c]] * Rad[col_rad[c]]
    return out_arr
