"""Kernel backend selection.

Imports the compiled Cython kernels when the extension built successfully,
otherwise falls back to the pure numpy/scipy reference implementations.
Both backends expose the same functions:

* ``csr_matvec(indptr, indices, data, x) -> y``
* ``csr_apply_mid(indptr, indices, data, X, n_rows) -> Y``
  with X of shape (a, n, b) C-contiguous and Y of shape (a, n_rows, b).

``HAVE_COMPILED`` and ``backend_name()`` report which backend is active.
"""

import numpy as np

from . import py_ref

try:  # pragma: no cover - exercised indirectly, depends on build
    from . import _ckern

    HAVE_COMPILED = True
except ImportError:  # pragma: no cover
    _ckern = None
    HAVE_COMPILED = False

_backend = _ckern if HAVE_COMPILED else py_ref


def backend_name():
    return "compiled" if HAVE_COMPILED else "python"


def csr_matvec(indptr, indices, data, x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _backend.csr_matvec(indptr, indices, data, x)


def csr_apply_mid(indptr, indices, data, X, n_rows):
    X = np.ascontiguousarray(X, dtype=np.float64)
    return _backend.csr_apply_mid(indptr, indices, data, X, n_rows)


def csr_parts(S):
    """Return (indptr, indices, data) of a scipy CSR matrix, index dtype int32."""
    indptr = np.asarray(S.indptr, dtype=np.int32)
    indices = np.asarray(S.indices, dtype=np.int32)
    data = np.asarray(S.data, dtype=np.float64)
    return indptr, indices, data
