"""Three-core TT representation tests: dense round-trips, rounding bounds,
arithmetic against dense oracles, orthogonalization/frames, operator
application, time-slice extraction, and the binary container."""

import numpy as np
import pytest
import scipy.sparse as sps

from ttdre.tt import (
    FrameMatrix,
    KronTerm,
    LowRank,
    TTOperator,
    TTVector,
    Timeslice,
    apply_spatial_mid,
    apply_spatial_rows,
    build_frame,
    extract_timeslice,
    identity_op,
    is_zero,
    op_dense,
    orthogonalize,
    sparse_is_identity,
    tt_add,
    tt_dot,
    tt_from_dense,
    tt_load,
    tt_norm,
    tt_op_apply,
    tt_op_apply_rounded,
    tt_rank1,
    tt_residual_rounded,
    tt_round,
    tt_save,
    tt_scale,
    tt_to_dense,
    tt_vec,
    tt_zero,
)

from tests.util import random_operator, random_tt


def dense_norm(v):
    return np.linalg.norm(tt_to_dense(v))


# ---------------------------------------------------------------------------
# construction and dense conversion

def test_core_shape_validation(rng):
    with pytest.raises(ValueError):
        TTVector(np.zeros((3, 2)), np.zeros((3, 4, 2)), np.zeros((2, 4)))
    with pytest.raises(ValueError):
        TTVector(np.zeros((3, 2)), np.zeros((2, 4, 2)), np.zeros((3, 4)))
    with pytest.raises(ValueError):
        TTVector(np.zeros(3), np.zeros((1, 4, 1)), np.zeros((1, 4)))


def test_validate_rejects_nonfinite():
    v = tt_rank1([1.0, np.nan], [1.0], [1.0])
    with pytest.raises(ValueError):
        v.validate()


def test_rank1_tensor_compresses_to_rank_one(rng):
    u, v, w = rng.standard_normal(5), rng.standard_normal(4), rng.standard_normal(4)
    T = np.einsum("i,j,k->ijk", u, v, w)
    p = tt_from_dense(T, 1e-12)
    assert p.ranks == (1, 1)
    np.testing.assert_allclose(tt_to_dense(p), T, atol=1e-12)


def test_zero_tensor_canonical_form():
    p = tt_from_dense(np.zeros((3, 2, 2)), 1e-10)
    assert is_zero(p) and p.ranks == (1, 1)
    np.testing.assert_array_equal(tt_to_dense(p), np.zeros((3, 2, 2)))


def test_dense_roundtrip_exact(rng):
    T = rng.standard_normal((5, 4, 4))
    p = tt_from_dense(T, 0.0)
    assert np.linalg.norm(tt_to_dense(p) - T) <= 1e-12 * np.linalg.norm(T)


def test_roundtrip_all_small_dims(rng):
    for n_t in (1, 2, 6):
        for n in (1, 3, 6):
            T = rng.standard_normal((n_t, n, n))
            p = tt_from_dense(T, 0.0)
            assert np.linalg.norm(tt_to_dense(p) - T) <= 1e-12 * np.linalg.norm(T)


def test_from_dense_respects_tolerance(rng):
    # smooth low-rank-ish tensor: moderate eps must keep the error bounded
    t = np.linspace(0, 1, 8)
    T = np.exp(-np.add.outer(np.add.outer(t, t), t))
    for eps in (1e-10, 1e-6, 1e-2):
        p = tt_from_dense(T, eps)
        err = np.linalg.norm(tt_to_dense(p) - T)
        assert err <= np.sqrt(2) * eps * np.linalg.norm(T) + 1e-14


def test_all_ones_cores():
    p = TTVector(np.ones((2, 1)), np.ones((1, 2, 1)), np.ones((1, 2)))
    np.testing.assert_array_equal(tt_to_dense(p), np.ones((2, 2, 2)))


def test_to_dense_guard():
    p = tt_rank1(np.ones(51), np.ones(1000), np.ones(1000))
    with pytest.raises(ValueError):
        tt_to_dense(p)


def test_rejects_nonsquare_tensor(rng):
    with pytest.raises(ValueError):
        tt_from_dense(rng.standard_normal((3, 4, 5)), 1e-10)


# ---------------------------------------------------------------------------
# rounding

def test_round_keeps_minimal_ranks(rng):
    p = random_tt(rng, 6, 5, 2, 3)
    q = tt_round(p, 0.0)
    assert q.ranks == (2, 3)
    np.testing.assert_allclose(tt_to_dense(q), tt_to_dense(p), atol=1e-12)


def test_round_collapses_doubled_representation(rng):
    p = random_tt(rng, 6, 5, 2, 3)
    doubled = tt_add(p, p)
    assert doubled.ranks == (4, 6)
    q = tt_round(doubled, 1e-12)
    assert q.ranks == (2, 3)
    np.testing.assert_allclose(tt_to_dense(q), 2 * tt_to_dense(p), atol=1e-10)


def test_round_total_truncation(rng):
    p = random_tt(rng, 5, 4, 3, 3)
    q = tt_round(p, 1.0)
    assert is_zero(q) or (q.ranks[0] <= 1 and q.ranks[1] <= 1)
    err = np.linalg.norm(tt_to_dense(q) - tt_to_dense(p))
    assert err <= (1.0 + 1e-12) * dense_norm(p)


def test_round_error_bound_and_monotone_ranks(rng):
    for _ in range(5):
        p = random_tt(rng, 6, 5, 4, 5)
        nrm = dense_norm(p)
        for eps in (0.0, 1e-12, 1e-8, 1e-4, 1e-1):
            q = tt_round(p, eps)
            assert q.ranks[0] <= p.ranks[0] and q.ranks[1] <= p.ranks[1]
            err = np.linalg.norm(tt_to_dense(q) - tt_to_dense(p))
            assert err <= (np.sqrt(2) * eps + 1e-14) * nrm


def test_round_hard_caps(rng):
    p = random_tt(rng, 8, 6, 5, 6)
    q = tt_round(p, 0.0, rmax=(2, 3))
    assert q.ranks == (2, 3)


def test_round_zero_input():
    q = tt_round(tt_zero(4, 3), 1e-10)
    assert is_zero(q)
    with pytest.raises(ValueError):
        tt_round(tt_zero(4, 3), -1.0)


# ---------------------------------------------------------------------------
# arithmetic

def test_add_zero_is_identity(rng):
    p = random_tt(rng, 4, 3, 2, 2)
    q = tt_add(p, tt_zero(4, 3))
    np.testing.assert_allclose(tt_to_dense(q), tt_to_dense(p), atol=1e-14)
    q = tt_add(tt_zero(4, 3), p)
    np.testing.assert_allclose(tt_to_dense(q), tt_to_dense(p), atol=1e-14)


def test_add_cancellation(rng):
    p = random_tt(rng, 4, 3, 2, 2)
    s = tt_add(p, tt_scale(p, -1.0))
    assert s.ranks == (4, 4)
    assert dense_norm(s) <= 1e-13 * dense_norm(p)


def test_add_matches_dense(rng):
    a = random_tt(rng, 5, 4, 2, 3)
    b = random_tt(rng, 5, 4, 3, 2)
    ref = tt_to_dense(a) + tt_to_dense(b)
    np.testing.assert_allclose(tt_to_dense(tt_add(a, b)), ref,
                               atol=1e-13 * np.linalg.norm(ref))


def test_add_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        tt_add(random_tt(rng, 4, 3, 1, 1), random_tt(rng, 4, 4, 1, 1))


def test_dot_positive_and_matches_dense(rng):
    a = random_tt(rng, 4, 3, 2, 3)
    b = random_tt(rng, 4, 3, 3, 2)
    assert tt_dot(a, a) >= 0
    ref = float(np.dot(tt_vec(a), tt_vec(b)))
    assert abs(tt_dot(a, b) - ref) <= 1e-13 * max(abs(ref), 1.0)
    assert abs(tt_norm(a) - np.linalg.norm(tt_vec(a))) <= 1e-12 * tt_norm(a)


def test_dot_orthogonal_rank_ones():
    a = tt_rank1([1.0, 0.0], [1.0, 2.0], [3.0, 4.0])
    b = tt_rank1([0.0, 1.0], [1.0, 2.0], [3.0, 4.0])
    assert tt_dot(a, b) == 0.0


def test_scale(rng):
    p = random_tt(rng, 4, 3, 2, 2)
    np.testing.assert_allclose(tt_to_dense(tt_scale(p, -2.5)),
                               -2.5 * tt_to_dense(p), atol=1e-14)


# ---------------------------------------------------------------------------
# orthogonalization and frames

def test_orthogonalize_preserves_tensor(rng):
    p = random_tt(rng, 5, 4, 3, 3)
    ref = tt_to_dense(p)
    for k in (1, 2, 3):
        q = orthogonalize(p, k)
        assert q.orth == k
        assert np.linalg.norm(tt_to_dense(q) - ref) <= 1e-12 * np.linalg.norm(ref)


def test_frame_columns_orthonormal(rng):
    p = random_tt(rng, 3, 3, 2, 2)
    for k in (1, 2, 3):
        F = build_frame(orthogonalize(p, k), k).to_dense()
        np.testing.assert_allclose(F.T @ F, np.eye(F.shape[1]), atol=1e-12)


def test_frame_identity(rng):
    p = random_tt(rng, 4, 3, 2, 3)
    ref = tt_to_dense(p)
    for k in (1, 2, 3):
        q = orthogonalize(p, k)
        fr = build_frame(q, k)
        core = (q.core1, q.core2, q.core3)[k - 1]
        back = fr.apply(core.ravel())
        assert np.linalg.norm(tt_to_dense(back) - ref) <= 1e-12 * np.linalg.norm(ref)


def test_frame_apply_t_inverts_apply(rng):
    p = random_tt(rng, 4, 3, 2, 3)
    for k in (1, 2, 3):
        q = orthogonalize(p, k)
        fr = build_frame(q, k)
        w = rng.standard_normal((q.core1, q.core2, q.core3)[k - 1].shape)
        out = fr.apply_t(fr.apply(w.ravel()))
        np.testing.assert_allclose(out, w, atol=1e-12)


def test_frame_matches_dense_matrix(rng):
    p = random_tt(rng, 3, 3, 2, 2)
    for k in (1, 2, 3):
        q = orthogonalize(p, k)
        fr = build_frame(q, k)
        F = fr.to_dense()
        w = rng.standard_normal(F.shape[1])
        np.testing.assert_allclose(tt_vec(fr.apply(w)), F @ w, atol=1e-12)
        y = random_tt(rng, 3, 3, 2, 2)
        np.testing.assert_allclose(fr.apply_t(y).ravel(), F.T @ tt_vec(y),
                                   atol=1e-12)


def test_frame_k2_dense_formula(rng):
    p = orthogonalize(random_tt(rng, 3, 3, 2, 2), 2)
    F = FrameMatrix(2, p).to_dense()
    ref = np.kron(p.core1, np.kron(np.eye(3), p.core3.T))
    np.testing.assert_allclose(F, ref, atol=1e-13)


def test_build_frame_requires_orthogonalization(rng):
    p = random_tt(rng, 3, 3, 2, 2)
    with pytest.raises(ValueError):
        build_frame(p, 2)
    with pytest.raises(ValueError):
        orthogonalize(p, 4)


# ---------------------------------------------------------------------------
# operators

def test_identity_operator(rng):
    p = random_tt(rng, 4, 3, 2, 2)
    q = tt_op_apply(identity_op(4, 3), p)
    np.testing.assert_allclose(tt_to_dense(q), tt_to_dense(p), atol=1e-14)


def test_op_apply_matches_dense(rng):
    for _ in range(6):
        A = random_operator(rng, 3, 3, n_terms=3)
        v = random_tt(rng, 3, 3, 2, 2)
        ref = op_dense(A) @ tt_vec(v)
        out = tt_vec(tt_op_apply(A, v))
        assert np.linalg.norm(out - ref) <= 1e-12 * max(np.linalg.norm(ref), 1)


def test_op_apply_rank_product_rule(rng):
    A = TTOperator(4, 3, [KronTerm(2.0, rng.standard_normal(4),
                                   rng.standard_normal((3, 3)), None)])
    v = random_tt(rng, 4, 3, 1, 1)
    assert tt_op_apply(A, v).ranks == (1, 1)


def test_op_linearity(rng):
    A = random_operator(rng, 3, 3)
    a = random_tt(rng, 3, 3, 2, 2)
    b = random_tt(rng, 3, 3, 2, 2)
    lhs = tt_vec(tt_op_apply(A, tt_add(tt_scale(a, 2.0), tt_scale(b, -3.0))))
    rhs = 2.0 * tt_vec(tt_op_apply(A, a)) - 3.0 * tt_vec(tt_op_apply(A, b))
    np.testing.assert_allclose(lhs, rhs, atol=1e-11 * max(np.linalg.norm(rhs), 1))


def test_op_scaled_plus(rng):
    A = random_operator(rng, 3, 3, 2)
    B = random_operator(rng, 3, 3, 2)
    v = random_tt(rng, 3, 3, 2, 2)
    combined = A.plus(B.scaled(-2.0))
    ref = op_dense(A) @ tt_vec(v) - 2.0 * (op_dense(B) @ tt_vec(v))
    np.testing.assert_allclose(tt_vec(tt_op_apply(combined, v)), ref,
                               atol=1e-11 * max(np.linalg.norm(ref), 1))


def test_kron_term_count_expands_lowrank():
    lr = LowRank(np.ones((4, 3)), np.ones((4, 3)))
    A = TTOperator(2, 4, [KronTerm(1.0, None, lr, None),
                          KronTerm(1.0, None, lr, lr),
                          KronTerm(1.0, None, None, None)])
    assert A.kron_term_count == 3 + 9 + 1


def test_op_apply_rounded_and_residual(rng):
    A = random_operator(rng, 3, 3, 4)
    v = random_tt(rng, 3, 3, 2, 2)
    f = random_tt(rng, 3, 3, 2, 2)
    ref = op_dense(A) @ tt_vec(v)
    out = tt_vec(tt_op_apply_rounded(A, v, 1e-12, chunk=2))
    assert np.linalg.norm(out - ref) <= 1e-9 * max(np.linalg.norm(ref), 1)
    res_ref = tt_vec(f) - ref
    res = tt_vec(tt_residual_rounded(A, v, f, 1e-12, chunk=2))
    assert np.linalg.norm(res - res_ref) <= 1e-9 * max(np.linalg.norm(res_ref), 1)


def test_op_dense_guard():
    with pytest.raises(ValueError):
        op_dense(identity_op(3, 90))


def test_op_size_mismatch(rng):
    with pytest.raises(ValueError):
        tt_op_apply(identity_op(3, 4), random_tt(rng, 3, 3, 1, 1))
    with pytest.raises(ValueError):
        identity_op(3, 4).plus(identity_op(3, 5))


# ---------------------------------------------------------------------------
# spatial factor application paths

def test_apply_spatial_paths_match_dense(rng):
    core2 = rng.standard_normal((2, 5, 3))
    core3 = rng.standard_normal((3, 5))
    factors = [
        None,
        rng.standard_normal((5, 5)),
        sps.csr_matrix(np.triu(rng.standard_normal((5, 5)))),
        LowRank(rng.standard_normal((5, 2)), rng.standard_normal((5, 2))),
    ]
    for S in factors:
        if S is None:
            D = np.eye(5)
        elif isinstance(S, LowRank):
            D = S.dense()
        elif sps.issparse(S):
            D = S.toarray()
        else:
            D = S
        np.testing.assert_allclose(apply_spatial_mid(S, core2),
                                   np.einsum("ij,ajb->aib", D, core2), atol=1e-12)
        np.testing.assert_allclose(apply_spatial_rows(S, core3),
                                   core3 @ D.T, atol=1e-12)


def test_sparse_identity_detection():
    assert sparse_is_identity(sps.eye(4, format="csr"))
    assert not sparse_is_identity(sps.csr_matrix(2.0 * np.eye(4)))
    assert not sparse_is_identity(sps.csr_matrix(np.ones((4, 4))))
    S = sps.eye(3, format="csr")
    sparse_is_identity(S)
    assert S._tt_identity is True  # cached


def test_identity_fast_path_returns_copy(rng):
    core2 = rng.standard_normal((2, 4, 2))
    out = apply_spatial_mid(sps.eye(4, format="csr"), core2)
    out[0, 0, 0] += 1.0
    assert core2[0, 0, 0] != out[0, 0, 0]
    core3 = rng.standard_normal((2, 4))
    out3 = apply_spatial_rows(sps.eye(4, format="csr"), core3)
    out3[0, 0] += 1.0
    assert core3[0, 0] != out3[0, 0]


# ---------------------------------------------------------------------------
# time slices

def test_timeslice_matches_dense_transposed_slab(rng):
    v = random_tt(rng, 4, 3, 2, 3)
    T = tt_to_dense(v)
    for j in range(1, 5):
        P = extract_timeslice(v, j).dense()
        np.testing.assert_allclose(P, T[j - 1].T, atol=1e-13)


def test_timeslice_flat_layout_is_slice_of_vec(rng):
    # vec(P^j) in column-major order equals slice j of the C-order flat vector
    v = random_tt(rng, 3, 4, 2, 2)
    flat = tt_vec(v)
    n = v.n
    for j in range(1, 4):
        P = extract_timeslice(v, j).dense()
        np.testing.assert_allclose(P.ravel(order="F"),
                                   flat[(j - 1) * n * n: j * n * n], atol=1e-13)


def test_timeslice_rank1_outer_product():
    u, w, z = np.array([2.0, -1.0]), np.array([1.0, 3.0, 0.5]), np.array([4.0, 0.0, 1.0])
    v = tt_rank1(u, w, z)
    P2 = extract_timeslice(v, 2).dense()
    np.testing.assert_allclose(P2, u[1] * np.outer(z, w), atol=1e-14)


def test_timeslice_zero_row():
    v = tt_rank1([0.0, 1.0], [1.0, 2.0], [3.0, 4.0])
    np.testing.assert_array_equal(extract_timeslice(v, 1).dense(), np.zeros((2, 2)))


def test_timeslice_index_range(rng):
    v = random_tt(rng, 3, 2, 1, 1)
    with pytest.raises(IndexError):
        extract_timeslice(v, 0)
    with pytest.raises(IndexError):
        extract_timeslice(v, 4)


def test_operator_acts_per_slice(rng):
    # a term with time factor None acts slice-wise as P -> s3 P s2^T
    S2 = rng.standard_normal((4, 4))
    S3 = np.triu(rng.standard_normal((4, 4)))
    A = TTOperator(3, 4, [KronTerm(1.0, None, S2, sps.csr_matrix(S3))])
    v = random_tt(rng, 3, 4, 2, 2)
    out = tt_op_apply(A, v)
    for j in range(1, 4):
        P = extract_timeslice(v, j).dense()
        np.testing.assert_allclose(extract_timeslice(out, j).dense(),
                                   S3 @ P @ S2.T, atol=1e-12)


# ---------------------------------------------------------------------------
# serialization

def test_container_roundtrip(tmp_path, rng):
    v = orthogonalize(random_tt(rng, 5, 4, 2, 3), 3)
    path = tmp_path / "sol.tt"
    tt_save(v, path)
    w = tt_load(path)
    np.testing.assert_array_equal(w.core1, v.core1)
    np.testing.assert_array_equal(w.core2, v.core2)
    np.testing.assert_array_equal(w.core3, v.core3)
    assert w.orth == 3
    meta = (tmp_path / "sol.tt.json").read_text()
    assert '"tt-vector"' in meta and '"ranks"' in meta


def test_container_rejects_bad_magic(tmp_path, rng):
    path = tmp_path / "sol.tt"
    tt_save(random_tt(rng, 3, 2, 1, 1), path)
    raw = bytearray(path.read_bytes())
    raw[0] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="not a TT vector"):
        tt_load(path)


def test_container_rejects_truncation_and_trailing(tmp_path, rng):
    path = tmp_path / "sol.tt"
    tt_save(random_tt(rng, 3, 2, 1, 1), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])
    with pytest.raises(ValueError, match="truncated"):
        tt_load(path)
    path.write_bytes(raw + b"\x00")
    with pytest.raises(ValueError, match="trailing"):
        tt_load(path)


def test_container_rejects_unknown_version(tmp_path, rng):
    import struct
    path = tmp_path / "sol.tt"
    tt_save(random_tt(rng, 3, 2, 1, 1), path)
    raw = bytearray(path.read_bytes())
    raw[8:16] = struct.pack("<q", 99)
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="version"):
        tt_load(path)


def test_save_rejects_nonfinite(tmp_path):
    v = tt_rank1([np.inf], [1.0], [1.0])
    with pytest.raises(ValueError):
        tt_save(v, tmp_path / "bad.tt")
