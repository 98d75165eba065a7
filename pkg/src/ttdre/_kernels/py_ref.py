"""Pure numpy/scipy reference implementations of the CSR kernels.

Same contracts as the compiled versions in ``_ckern``; used as the import-time
fallback and as the cross-check implementation in tests and benchmarks.
"""

import numpy as np


def csr_matvec(indptr, indices, data, x):
    n_rows = len(indptr) - 1
    out = np.zeros(n_rows)
    for i in range(n_rows):
        lo, hi = indptr[i], indptr[i + 1]
        out[i] = np.dot(data[lo:hi], x[indices[lo:hi]])
    return out


def csr_apply_mid(indptr, indices, data, X, n_rows):
    """out[a, i, b] = sum_j S[i, j] X[a, j, b] for CSR S with n_rows rows."""
    import scipy.sparse as sps

    a, n, b = X.shape
    S = sps.csr_matrix((data, indices, indptr), shape=(n_rows, n))
    # Fold the outer axes away, apply on the left, restore. The transpose
    # forces a copy; the compiled kernel exists to avoid exactly that.
    flat = X.transpose(1, 0, 2).reshape(n, a * b)
    out = S @ flat
    return np.ascontiguousarray(out.reshape(n_rows, a, b).transpose(1, 0, 2))
