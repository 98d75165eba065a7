# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled CSR kernels.

Two operations dominate the inner loops of the solver:

* ``csr_matvec`` -- plain CSR matrix-vector product.
* ``csr_apply_mid`` -- apply a CSR matrix along the middle axis of a
  C-contiguous (a, n, b) array, i.e. out[a, i, :] = sum_j S[i, j] * X[a, j, :].
  Doing this without transposing keeps the b-axis contiguous, which the
  pure-numpy route cannot (it reshapes through a transpose copy).
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def csr_matvec(cnp.int32_t[::1] indptr, cnp.int32_t[::1] indices,
               double[::1] data, double[::1] x):
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef cnp.ndarray[double, ndim=1] out = np.zeros(n_rows)
    cdef double[::1] y = out
    cdef Py_ssize_t i, p
    cdef double acc
    for i in range(n_rows):
        acc = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            acc += data[p] * x[indices[p]]
        y[i] = acc
    return out


def csr_apply_mid(cnp.int32_t[::1] indptr, cnp.int32_t[::1] indices,
                  double[::1] data, double[:, :, ::1] X, Py_ssize_t n_rows):
    """out[a, i, b] = sum_j S[i, j] X[a, j, b] for CSR S with n_rows rows."""
    cdef Py_ssize_t A = X.shape[0]
    cdef Py_ssize_t B = X.shape[2]
    cdef cnp.ndarray[double, ndim=3] out = np.zeros((A, n_rows, B))
    cdef double[:, :, ::1] Y = out
    cdef Py_ssize_t a, i, p, b, j
    cdef double w
    for a in range(A):
        for i in range(n_rows):
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                w = data[p]
                for b in range(B):
                    Y[a, i, b] += w * X[a, j, b]
    return out
