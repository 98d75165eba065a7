"""Kernel backend tests: the compiled extension and the pure-Python reference
must agree exactly on the CSR product kernels."""

import numpy as np
import scipy.sparse as sps

from ttdre import _kernels
from ttdre._kernels import py_ref

from tests.util import random_sparse

HAVE_COMPILED = _kernels.HAVE_COMPILED


def test_backend_reported():
    name = _kernels.backend_name()
    assert name in ("compiled", "python")
    assert (name == "compiled") == HAVE_COMPILED


def test_csr_parts_dtypes(rng):
    S = random_sparse(rng, 9)
    indptr, indices, data = _kernels.csr_parts(S)
    assert indptr.dtype == np.int32 and indices.dtype == np.int32
    assert data.dtype == np.float64
    assert indptr[-1] == S.nnz


def test_py_ref_matvec_matches_scipy(rng):
    for n in (1, 5, 23):
        S = random_sparse(rng, n)
        x = rng.standard_normal(n)
        out = py_ref.csr_matvec(*_kernels.csr_parts(S), x)
        np.testing.assert_allclose(out, S @ x, atol=1e-13)


def test_py_ref_apply_mid_matches_einsum(rng):
    S = random_sparse(rng, 6)
    X = rng.standard_normal((3, 6, 4))
    out = py_ref.csr_apply_mid(*_kernels.csr_parts(S), X, 6)
    ref = np.einsum("ij,ajb->aib", S.toarray(), X)
    np.testing.assert_allclose(out, ref, atol=1e-13)


def test_backends_agree_on_matvec(rng):
    if not HAVE_COMPILED:
        return
    from ttdre._kernels import _ckern
    for n in (1, 4, 17, 64):
        S = random_sparse(rng, n)
        x = rng.standard_normal(n)
        parts = _kernels.csr_parts(S)
        # summation order differs between backends: agreement to rounding only
        np.testing.assert_allclose(
            _ckern.csr_matvec(*parts, x), py_ref.csr_matvec(*parts, x),
            rtol=1e-13, atol=1e-13)


def test_backends_agree_on_apply_mid(rng):
    if not HAVE_COMPILED:
        return
    from ttdre._kernels import _ckern
    for (a, n, b) in [(1, 3, 1), (2, 8, 5), (4, 16, 3)]:
        S = random_sparse(rng, n)
        X = np.ascontiguousarray(rng.standard_normal((a, n, b)))
        parts = _kernels.csr_parts(S)
        np.testing.assert_allclose(
            _ckern.csr_apply_mid(*parts, X, n), py_ref.csr_apply_mid(*parts, X, n),
            rtol=1e-13, atol=1e-13)


def test_rectangular_apply_mid(rng):
    # n_rows can differ from the middle mode size (rectangular spatial factors)
    S = sps.csr_matrix(rng.standard_normal((4, 6)))
    X = rng.standard_normal((2, 6, 3))
    out = _kernels.csr_apply_mid(*_kernels.csr_parts(S), X, 4)
    ref = np.einsum("ij,ajb->aib", S.toarray(), X)
    assert out.shape == (2, 4, 3)
    np.testing.assert_allclose(out, ref, atol=1e-13)


def test_dispatcher_accepts_noncontiguous(rng):
    S = random_sparse(rng, 8)
    X = rng.standard_normal((8, 3, 5)).transpose(1, 0, 2)  # non-contiguous view
    out = _kernels.csr_apply_mid(*_kernels.csr_parts(S), X, 8)
    ref = np.einsum("ij,ajb->aib", S.toarray(), X)
    np.testing.assert_allclose(out, ref, atol=1e-13)
