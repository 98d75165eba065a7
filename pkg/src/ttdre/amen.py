"""Alternating Minimal Energy solver for TT-structured linear systems A p = f.

One AMEn iteration sweeps the cores k = 1, 2, 3, solving the Galerkin-projected
local system (U_{!=k}^T A U_{!=k}) vec_T(u^(k)) = U_{!=k}^T f at each step,
enriching bonds 1 and 2 with a low-rank approximation of the current residual
f - A x, and rounding the iterate at the stopping threshold after each sweep.
The time-core system is block upper-bidiagonal and solved exactly by backward
substitution; the third-core system is solved directly when small; the
middle-core system is always solved by GMRES with a block-Jacobi
preconditioner whose diagonal blocks are sparse-LU factorizations plus
low-rank Woodbury corrections.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .linalg import GmresBreakdown, GmresConfig, gmres
from .tt import (
    FrameMatrix,
    LowRank,
    TTOperator,
    TTVector,
    apply_spatial_mid,
    apply_spatial_rows,
    is_zero,
    orthogonalize,
    sparse_is_identity,
    spatial_dense,
    term_apply,
    time_dense,
    tt_norm,
    tt_round,
    tt_zero,
    _orth_core1,
    _orth_core2_left,
)

_DENSE_LOCAL_MAX = 5000  # largest local system materialized for a dense solve


@dataclass(frozen=True)
class AmenConfig:
    eps_amen: float = 1e-9
    max_sweeps: int = 30
    enrichment_ranks: tuple = (4, 4)
    rank_cap: tuple = (None, None)
    gmres: Optional[GmresConfig] = None

    def __post_init__(self):
        if self.eps_amen <= 0:
            raise ValueError("eps_amen must be > 0")
        if any(r < 0 for r in self.enrichment_ranks):
            raise ValueError("enrichment ranks must be >= 0")

    def local_gmres(self):
        if self.gmres is not None:
            return self.gmres
        return GmresConfig(tolerance=max(self.eps_amen / 10.0, 1e-14),
                           max_iterations=400, restart=30)


@dataclass
class LocalTerm:
    """Projected factors of one Kronecker term of the reduced matrix B_k.

    For k = 2, identity time/third factors project onto orthonormal frames as
    the identity and are stored as None, and low-rank third factors keep
    their thin shape; the matvec exploits both."""

    coeff: float
    tfac: object = None   # k = 1: original time factor
    vmat: object = None   # k = 1: (r1, r1) projection of s2 (x) s3
    g1: object = None     # k = 2: (r1, r1) time projection, None = identity
    s2: object = None     # k = 2: original middle factor; k = 3 unused
    g3: object = None     # k = 2: (r2, r2) | LowRank | None third projection
    wmat: object = None   # k = 3: (r2, r2) time+middle projection
    s3: object = None     # k = 3: original third factor


@dataclass
class LocalSystem:
    k: int
    shape: tuple
    terms: list
    rhs: Optional[np.ndarray] = None
    n_t: int = 0
    n: int = 0

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def term_count(self):
        return len(self.terms)

    def matvec(self, x):
        X = x.reshape(self.shape)
        out = np.zeros_like(X)
        if self.k == 1:
            for t in self.terms:
                TX = _apply_time(t.tfac, X)
                out += t.coeff * (TX @ t.vmat.T)
        elif self.k == 2:
            # consecutive terms often share their g1 object (the two
            # linearization terms of one bond index): contract it once
            last_g1 = last_t1 = None
            for t in self.terms:
                if t.g1 is None:
                    t1 = X
                elif t.g1 is last_g1:
                    t1 = last_t1
                else:
                    t1 = np.tensordot(t.g1, X, axes=(1, 0))
                    last_g1, last_t1 = t.g1, t1
                if t.s2 is None or (sps.issparse(t.s2) and sparse_is_identity(t.s2)):
                    t2 = t1
                else:
                    t2 = apply_spatial_mid(t.s2, t1)
                if t.g3 is None:
                    out += t.coeff * t2
                elif isinstance(t.g3, LowRank):
                    tmp = np.tensordot(t2, t.g3.right, axes=(2, 0))
                    out += t.coeff * np.tensordot(tmp, t.g3.left, axes=(2, 1))
                else:
                    out += t.coeff * np.tensordot(t2, t.g3, axes=(2, 1))
        else:
            for t in self.terms:
                out += t.coeff * (t.wmat @ apply_spatial_rows(t.s3, X))
        return out.ravel()

    def dense(self):
        """Materialize B_k; forbidden for k = 2 (kept structured by design)."""
        if self.k == 2:
            raise ValueError("middle-core local matrix is never densified")
        out = np.zeros((self.size, self.size))
        if self.k == 1:
            for t in self.terms:
                out += t.coeff * np.kron(time_dense(t.tfac, self.n_t), t.vmat)
        else:
            for t in self.terms:
                out += t.coeff * np.kron(t.wmat, spatial_dense(t.s3, self.n))
        return out


def _apply_time(tfac, X):
    if tfac is None:
        return X.copy()
    if isinstance(tfac, np.ndarray) and tfac.ndim == 1:
        return tfac[:, None] * X
    return tfac @ X


def _time_bands(tfac, n_t):
    """Diagonal and superdiagonal bands of a time factor, or None when its
    entries fall outside those two bands."""
    if tfac is None:
        return np.ones(n_t), np.zeros(max(n_t - 1, 0))
    if isinstance(tfac, np.ndarray) and tfac.ndim == 1:
        return np.asarray(tfac, dtype=float), np.zeros(max(n_t - 1, 0))
    T = sps.coo_matrix(tfac)
    off = T.col - T.row
    if np.any((off < 0) | (off > 1)):
        return None
    d = np.zeros(n_t)
    s = np.zeros(max(n_t - 1, 0))
    np.add.at(d, T.row[off == 0], T.data[off == 0])
    np.add.at(s, T.row[off == 1], T.data[off == 1])
    return d, s


def _solve_time_marching(ls, rhs):
    """Exact solve of the core-1 system by backward block substitution.

    All time factors here are diagonal or carry one superdiagonal (the
    implicit-Euler difference), making B_1 block upper-bidiagonal in time:
    one backward pass of r1 x r1 solves is a direct solve at O(n_t r1^3)
    cost. Returns None when a factor has other structure."""
    n_t, r1 = ls.shape
    bands = [_time_bands(t.tfac, n_t) for t in ls.terms]
    if any(b is None for b in bands):
        return None
    D = np.zeros((n_t, r1, r1))
    S = np.zeros((max(n_t - 1, 0), r1, r1))
    for (d, s), t in zip(bands, ls.terms):
        D += (t.coeff * d)[:, None, None] * t.vmat
        if n_t > 1 and np.any(s):
            S += (t.coeff * s)[:, None, None] * t.vmat
    R = rhs.reshape(n_t, r1)
    X = np.empty_like(R)
    X[-1] = np.linalg.solve(D[-1], R[-1])
    for j in range(n_t - 2, -1, -1):
        X[j] = np.linalg.solve(D[j], R[j] - S[j] @ X[j + 1])
    return X.ravel()


def _time_diag(tfac, n_t):
    if tfac is None:
        return np.ones(n_t)
    if isinstance(tfac, np.ndarray) and tfac.ndim == 1:
        return tfac.copy()
    if sps.issparse(tfac):
        return tfac.diagonal()
    return np.diag(tfac).copy()


def project_operator(A: TTOperator, v: TTVector, k: int, f: Optional[TTVector] = None):
    """Galerkin projection B_k = U_{!=k}^T A U_{!=k} in Kronecker-term form.

    v must be orthogonalized toward core k. The factor aligned with mode k is
    kept as A's own (sparse / factored) core; the others are contracted with
    the frame cores. For the middle core, identity factors project onto the
    orthonormal frames as the identity (stored as None), a time factor shared
    by several terms is contracted once, and low-rank third factors stay
    factored. When f is given, the reduced right-hand side U_{!=k}^T f is
    stored on the result.
    """
    if v.orth != k:
        raise ValueError(f"iterate must be orthogonalized toward core {k}")
    u1, u2, u3 = v.core1, v.core2, v.core3
    r1, r2 = v.ranks
    terms = []
    g1_cache = {}
    for t in A.terms:
        if k == 1:
            Y2 = apply_spatial_mid(t.s2, u2)
            G3 = u3 @ apply_spatial_rows(t.s3, u3).T
            tmp = np.tensordot(Y2, G3, axes=(2, 1))           # (r1, n, r2)
            V = np.tensordot(u2, tmp, axes=([1, 2], [1, 2]))  # (r1, r1)
            terms.append(LocalTerm(coeff=t.coeff, tfac=t.tfac, vmat=V))
        elif k == 2:
            if t.tfac is None:
                G1 = None
            else:
                G1 = g1_cache.get(id(t.tfac))
                if G1 is None:
                    G1 = u1.T @ _apply_time(t.tfac, u1)
                    g1_cache[id(t.tfac)] = G1
            if t.s3 is None or (sps.issparse(t.s3) and sparse_is_identity(t.s3)):
                G3 = None
            elif isinstance(t.s3, LowRank):
                G3 = LowRank(u3 @ t.s3.left, u3 @ t.s3.right)
            else:
                G3 = u3 @ apply_spatial_rows(t.s3, u3).T
            terms.append(LocalTerm(coeff=t.coeff, g1=G1, s2=t.s2, g3=G3))
        else:
            G1 = u1.T @ _apply_time(t.tfac, u1)
            Y2 = apply_spatial_mid(t.s2, u2)
            Z = np.tensordot(G1, u2, axes=(0, 0))             # (r1, n, r2)
            W = np.tensordot(Z, Y2, axes=([0, 1], [0, 1]))    # (r2, r2)
            terms.append(LocalTerm(coeff=t.coeff, wmat=W, s3=t.s3))
    shape = {1: (v.n_t, r1), 2: (r1, v.n, r2), 3: (r2, v.n)}[k]
    ls = LocalSystem(k=k, shape=shape, terms=terms, n_t=v.n_t, n=v.n)
    if f is not None:
        ls.rhs = FrameMatrix(k, v).apply_t(f)
    return ls


# ---------------------------------------------------------------------------
# block-Jacobi preconditioners

class PrecondFailure(RuntimeError):
    pass


class _UnionPattern:
    """Shared CSC sparsity pattern for weighted sums of fixed sparse matrices.

    Preconditioner blocks differ only in scalar weights, so the structural
    union is computed once and each block assembly is a vectorized write into
    a data array -- no sparse arithmetic in the per-block loop."""

    def __init__(self, mats, n):
        csc = []
        for m in mats:
            M = sps.identity(n, format="csc") if m is None else sps.csc_matrix(m).copy()
            M.sort_indices()
            csc.append(M)
        pat = sps.csc_matrix((n, n))
        for M in csc:
            P = M.copy()
            P.data = np.ones_like(P.data)
            pat = pat + P
        pat = sps.csc_matrix(pat)
        pat.sort_indices()
        self.shape = pat.shape
        self.indptr = pat.indptr
        self.indices = pat.indices
        self.nnz = pat.nnz
        self.positions = []
        self.datas = []
        for M in csc:
            pos = np.empty(M.nnz, dtype=np.int64)
            for c in range(n):
                lo, hi = pat.indptr[c], pat.indptr[c + 1]
                mlo, mhi = M.indptr[c], M.indptr[c + 1]
                pos[mlo:mhi] = lo + np.searchsorted(
                    pat.indices[lo:hi], M.indices[mlo:mhi])
            self.positions.append(pos)
            self.datas.append(M.data)

    def matrix(self, weights):
        data = np.zeros(self.nnz)
        for w, pos, d in zip(weights, self.positions, self.datas):
            if w != 0.0:
                data[pos] += w * d
        return sps.csc_matrix((data, self.indices, self.indptr), shape=self.shape)


class _SparseLowRankSolve:
    """Solve (K + U V^T) x = b with sparse LU of K and a Woodbury correction.

    When the correction is at least as wide as the system the Woodbury detour
    loses its point and the block is factored densely instead."""

    def __init__(self, K, U=None, V=None):
        if U is not None and (U.shape[1] == 0 or not np.any(U)):
            U = V = None
        self.dense_lu = None
        self.correction = U is not None
        if U is not None and U.shape[1] >= K.shape[0]:
            self.dense_lu = sla.lu_factor(K.toarray() + U @ V.T,
                                          check_finite=False)
            self.correction = False
            return
        # FD stencils plus diagonal shifts have symmetric patterns, where
        # this ordering fills noticeably less than the COLAMD default
        self.lu = spla.splu(sps.csc_matrix(K), permc_spec="MMD_AT_PLUS_A")
        if U is not None:
            KinvU = self.lu.solve(U)
            S = np.eye(U.shape[1]) + V.T @ KinvU
            self.KinvU = KinvU
            self.V = V
            self.S_inv = np.linalg.inv(S)

    def solve(self, b):
        if self.dense_lu is not None:
            return sla.lu_solve(self.dense_lu, b, check_finite=False)
        z = self.lu.solve(b)
        if not self.correction:
            return z
        w = self.S_inv @ (self.V.T @ z)
        return z - self.KinvU @ w


class _DenseBlockBatch:
    """All diagonal blocks inverted and stacked; one batched matmul per
    application. Worth its memory only for small spatial dimensions."""

    def __init__(self, inv):
        self.inv = inv

    def solve_all(self, Xb):
        return np.matmul(self.inv, Xb[:, :, None])[:, :, 0]


class _SparseBlockList:
    def __init__(self, solvers):
        self.solvers = solvers

    def solve_all(self, Xb):
        out = np.empty_like(Xb)
        for i, s in enumerate(self.solvers):
            out[i] = s.solve(Xb[i])
        return out


_DENSE_BLOCK_MAX_N = 128          # largest spatial dim for stacked inverses
_DENSE_BLOCK_BUDGET = 150_000_000  # bytes allowed for the stack


def _block_solvers(factors, W, n):
    """Diagonal-block solver: one block per weight column.

    factors: the per-term spatial factors (sparse / None / LowRank); W of
    shape (terms, blocks) holds each term's scalar weight in each diagonal
    block. Small spatial dimensions invert all blocks densely in one stack
    (solved by a single batched matmul). Larger ones get one sparse LU per
    block, with the sparse factors combined through one shared sparsity
    pattern and the low-rank factors as a Woodbury correction: factors
    sharing their right matrix (one input matrix B for all linearization
    terms) merge by weight-combining the left factors, keeping the correction
    as wide as that shared factor; leftovers sharing a left matrix merge
    symmetrically on the right."""
    Q, nb = W.shape
    sp_idx = [q for q in range(Q) if not isinstance(factors[q], LowRank)]
    lr_idx = [q for q in range(Q) if isinstance(factors[q], LowRank)]
    by_right = {}
    for q in lr_idx:
        by_right.setdefault(id(factors[q].right), []).append(q)
    rgroups = [qs for qs in by_right.values() if len(qs) > 1]
    by_left = {}
    for qs in by_right.values():
        if len(qs) == 1:
            by_left.setdefault(id(factors[qs[0]].left), []).append(qs[0])
    lgroups = [qs for qs in by_left.values() if len(qs) > 1]
    singles = [qs[0] for qs in by_left.values() if len(qs) == 1]
    # (stacked lefts, shared right, weight rows): weights fold into the left
    rbuild = [(np.stack([factors[q].left for q in qs]),
               factors[qs[0]].right, W[qs]) for qs in rgroups]
    rbuild += [(factors[q].left[None], factors[q].right, W[[q]])
               for q in singles]
    # (shared left, stacked rights, weight rows): weights fold into the right
    lbuild = [(factors[qs[0]].left,
               np.stack([factors[q].right for q in qs]), W[qs])
              for qs in lgroups]

    if n <= _DENSE_BLOCK_MAX_N and nb * n * n * 8 <= _DENSE_BLOCK_BUDGET:
        D = np.zeros((nb, n, n))
        for q in sp_idx:
            D += W[q][:, None, None] * spatial_dense(factors[q], n)
        for lefts, right, gw in rbuild:
            D += np.einsum("qj,qnw->jnw", gw, lefts) @ right.T
        for left, rights, gw in lbuild:
            Vj = np.einsum("qj,qnw->jnw", gw, rights)
            D += left @ Vj.transpose(0, 2, 1)
        return _DenseBlockBatch(np.linalg.inv(D))

    pattern = _UnionPattern([factors[q] for q in sp_idx], n)
    Wsp = W[sp_idx]
    solvers = []
    for j in range(nb):
        K = pattern.matrix(Wsp[:, j])
        pu, pv = [], []
        for lefts, right, gw in rbuild:
            pu.append(np.tensordot(gw[:, j], lefts, axes=(0, 0)))
            pv.append(right)
        for left, rights, gw in lbuild:
            pu.append(left)
            pv.append(np.tensordot(gw[:, j], rights, axes=(0, 0)))
        if not pu:
            U = V = None
        elif len(pu) == 1:
            U, V = pu[0], pv[0]
        else:
            U, V = np.hstack(pu), np.hstack(pv)
        solvers.append(_SparseLowRankSolve(K, U, V))
    return _SparseBlockList(solvers)


def _proj_diag(g, size):
    """Diagonal of a projected factor stored dense, factored, or as None."""
    if g is None:
        return np.ones(size)
    if isinstance(g, LowRank):
        return np.einsum("im,im->i", g.left, g.right)
    return np.diag(g).copy()


def build_local_preconditioner(ls: LocalSystem):
    """Block-Jacobi inverse callback for the local system, or None on failure.

    For k = 2 this is P_2 = sum_q diag(B1_q) (x) B2_q (x) diag(B3_q): one
    sparse n x n solve per (s1, s2) pair, each a cached sparse LU plus a
    low-rank Woodbury correction for the factored terms. Mode 3 uses the
    analogous per-s2 blocks; mode 1 (only reached when exact time marching is
    unavailable) inverts the diagonal r1 x r1 time blocks."""
    try:
        if ls.k == 1:
            n_t, r1 = ls.shape
            co = np.array([t.coeff for t in ls.terms])
            diags = np.stack([_time_diag(t.tfac, n_t) for t in ls.terms])
            V = np.stack([t.vmat for t in ls.terms])
            inv = np.linalg.inv(np.einsum("q,qj,qik->jik", co, diags, V))

            def apply1(x):
                X = x.reshape(n_t, r1)
                return np.einsum("jik,jk->ji", inv, X).ravel()

            return apply1

        if ls.k == 2:
            r1, n, r2 = ls.shape
            co = np.array([t.coeff for t in ls.terms])
            g1d = np.stack([_proj_diag(t.g1, r1) for t in ls.terms])
            g3d = np.stack([_proj_diag(t.g3, r2) for t in ls.terms])
            W = co[:, None, None] * g1d[:, :, None] * g3d[:, None, :]
            solvers = _block_solvers([t.s2 for t in ls.terms],
                                     W.reshape(len(ls.terms), r1 * r2), n)

            def apply2(x):
                X = x.reshape(r1, n, r2)
                out = np.empty_like(X)
                i = 0
                for a in range(r1):
                    for b in range(r2):
                        out[a, :, b] = solvers[i].solve(
                            np.ascontiguousarray(X[a, :, b]))
                        i += 1
                return out.ravel()

            return apply2

        r2, n = ls.shape
        co = np.array([t.coeff for t in ls.terms])
        wd = np.stack([np.diag(t.wmat) for t in ls.terms])
        solvers = _block_solvers([t.s3 for t in ls.terms], co[:, None] * wd, n)

        def apply3(x):
            X = x.reshape(r2, n)
            out = np.empty_like(X)
            for b in range(r2):
                out[b] = solvers[b].solve(X[b])
            return out.ravel()

        return apply3
    except (RuntimeError, ValueError, sla.LinAlgError, np.linalg.LinAlgError):
        return None


# ---------------------------------------------------------------------------
# enrichment

def _residual_projection(A: TTOperator, x: TTVector, f: TTVector, z: TTVector, k: int):
    """U_{z,!=k}^T (f - A x) in core-k shape, without forming the residual."""
    fr = FrameMatrix(k, z)
    out = fr.apply_t(f)
    for t in A.terms:
        out -= fr.apply_t(term_apply(t, x))
    return out


def enrich_residual(A: TTOperator, v: TTVector, f: TTVector, rho, z_prev=None, eps=1e-10):
    """Rank-(rho1, rho2) approximation of the residual f - A v.

    One ALS pass: each core of the approximation is replaced by the projection
    of the exact residual onto the other two cores' frames. Forming the exact
    residual in TT form would require SVDs at the summed ranks of all operator
    terms; the projections here only ever touch rho-sized cores. z_prev (the
    approximation from the previous sweep) seeds the pass; otherwise the
    rounded right-hand side does.
    """
    rho1, rho2 = rho
    if rho1 <= 0 and rho2 <= 0:
        return tt_zero(v.n_t, v.n)
    caps = (max(rho1, 1), max(rho2, 1))
    z = z_prev
    if z is None or is_zero(z) or z.ranks[0] > caps[0] or z.ranks[1] > caps[1]:
        z = tt_round(f, eps, rmax=caps)
    if is_zero(z):
        return z
    z = orthogonalize(z, 1)
    p1 = _residual_projection(A, v, f, z, 1)
    u1, u2 = _orth_core1(p1, z.core2)
    z = TTVector(u1, u2, z.core3, orth=2)
    p2 = _residual_projection(A, v, f, z, 2)
    u2, u3 = _orth_core2_left(p2, z.core3)
    z = TTVector(z.core1, u2, u3, orth=3)
    p3 = _residual_projection(A, v, f, z, 3)
    return TTVector(z.core1, z.core2, p3)


# ---------------------------------------------------------------------------
# reports

@dataclass
class SweepRecord:
    sweep: int
    ranks: tuple
    max_dx: float
    gmres_iters: list = field(default_factory=list)
    precond_failed: int = 0
    wall_s: float = 0.0

    def to_dict(self):
        return {
            "sweep": self.sweep,
            "ranks": list(self.ranks),
            "max_dx": self.max_dx,
            "gmres_iters": list(self.gmres_iters),
            "precond_failed": self.precond_failed,
            "wall_s": self.wall_s,
        }


@dataclass
class AmenReport:
    sweeps: list = field(default_factory=list)
    converged: bool = False
    residual_estimate: float = float("nan")
    wall_s: float = 0.0

    @property
    def n_sweeps(self):
        return len(self.sweeps)

    @property
    def total_gmres_iters(self):
        return sum(sum(s.gmres_iters) for s in self.sweeps)

    def to_dict(self):
        return {
            "sweeps": [s.to_dict() for s in self.sweeps],
            "n_sweeps": self.n_sweeps,
            "converged": self.converged,
            "residual_estimate": self.residual_estimate,
            "total_gmres_iters": self.total_gmres_iters,
            "wall_s": self.wall_s,
        }


# ---------------------------------------------------------------------------
# local solves

def _solve_local(ls: LocalSystem, prev, cfg: AmenConfig, record: SweepRecord):
    """Solve B_k u = rhs starting from prev; returns (new core, rel change)."""
    rhs = ls.rhs.ravel()
    prev_flat = prev.ravel()
    new = None
    if ls.k == 1:
        try:
            new = _solve_time_marching(ls, rhs)
        except np.linalg.LinAlgError:
            new = None
    if new is None and ls.k in (1, 3) and ls.size <= _DENSE_LOCAL_MAX:
        B = ls.dense()
        new = np.linalg.solve(B, rhs)
    if new is None:
        # correction equation: B delta = rhs - B prev
        resid = rhs - ls.matvec(prev_flat)
        rhs_norm = np.linalg.norm(rhs)
        res_norm = np.linalg.norm(resid)
        if rhs_norm == 0.0:
            new = np.zeros_like(rhs)
        elif res_norm == 0.0:
            new = prev_flat.copy()
        else:
            base = cfg.local_gmres()
            tol = min(0.1, base.tolerance * max(1.0, rhs_norm / res_norm))
            local_cfg = GmresConfig(tol, base.max_iterations, base.restart)
            prec = build_local_preconditioner(ls)
            if prec is None:
                record.precond_failed += 1
            try:
                res = gmres(ls.matvec, prec, resid, local_cfg)
            except GmresBreakdown:
                if prec is None:
                    raise
                # a block factorization that passed construction can still be
                # numerically singular; retry without the preconditioner
                record.precond_failed += 1
                res = gmres(ls.matvec, None, resid, local_cfg)
            record.gmres_iters.append(res.iterations)
            new = prev_flat + res.x
    if not np.all(np.isfinite(new)):
        raise RuntimeError(f"non-finite local solution at core {ls.k}")
    denom = np.linalg.norm(new)
    dx = 0.0 if denom == 0.0 else np.linalg.norm(new - prev_flat) / denom
    return new.reshape(ls.shape), dx


def _cap(value, cap):
    return value if cap is None else min(value, cap)


def amen_solve(A: TTOperator, f: TTVector, x0: TTVector, cfg: AmenConfig):
    """Solve A x = f in TT format; returns (x, AmenReport)."""
    t_start = time.perf_counter()
    report = AmenReport()
    n_t, n = A.n_t, A.n
    if is_zero(f):
        report.converged = True
        report.residual_estimate = 0.0
        report.wall_s = time.perf_counter() - t_start
        return tt_zero(n_t, n), report

    rho1, rho2 = cfg.enrichment_ranks
    cap1, cap2 = cfg.rank_cap
    if x0 is None or is_zero(x0):
        # a zero start gives rank-deficient frames; start from the rounded rhs
        x = tt_round(f, cfg.eps_amen, rmax=(_cap(10**9, cap1), _cap(10**9, cap2)))
    else:
        x = x0.copy()
    x = orthogonalize(x, 1)
    z = None

    for sweep in range(1, cfg.max_sweeps + 1):
        t_sweep = time.perf_counter()
        rec = SweepRecord(sweep=sweep, ranks=x.ranks, max_dx=0.0)
        if rho1 > 0 or rho2 > 0:
            z = enrich_residual(A, x, f, (rho1, rho2), z_prev=z,
                                eps=max(cfg.eps_amen * 0.1, 1e-13))

        # core 1
        ls = project_operator(A, x, 1, f)
        new1, dx1 = _solve_local(ls, x.core1, cfg, rec)
        u1, u2, u3 = new1, x.core2, x.core3
        if z is not None and not is_zero(z):
            add = min(z.ranks[0], _cap(rho1, None if cap1 is None else max(cap1 - u1.shape[1], 0)))
            if add > 0:
                u1 = np.hstack([u1, z.core1[:, :add]])
                pad = np.zeros((add, n, u2.shape[2]))
                u2 = np.concatenate([u2, pad], axis=0)
        u1, u2 = _orth_core1(u1, u2)
        x = TTVector(u1, u2, u3, orth=2)

        # core 2
        ls = project_operator(A, x, 2, f)
        new2, dx2 = _solve_local(ls, x.core2, cfg, rec)
        u1, u2, u3 = x.core1, new2, x.core3
        if z is not None and not is_zero(z):
            add = min(z.ranks[1], _cap(rho2, None if cap2 is None else max(cap2 - u2.shape[2], 0)))
            if add > 0:
                z2p = np.einsum("st,tmc->smc", u1.T @ z.core1, z.core2)
                u2 = np.concatenate([u2, z2p[:, :, :add]], axis=2)
                u3 = np.vstack([u3, np.zeros((add, n))])
        u2, u3 = _orth_core2_left(u2, u3)
        x = TTVector(u1, u2, u3, orth=3)

        # core 3
        ls = project_operator(A, x, 3, f)
        new3, dx3 = _solve_local(ls, x.core3, cfg, rec)
        x = TTVector(x.core1, x.core2, new3, orth=None)

        rec.max_dx = max(dx1, dx2, dx3)
        x = tt_round(x, cfg.eps_amen, rmax=(cap1, cap2))
        rec.ranks = x.ranks
        rec.wall_s = time.perf_counter() - t_sweep
        report.sweeps.append(rec)
        if rec.max_dx <= cfg.eps_amen:
            report.converged = True
            break
        x = orthogonalize(x, 1)

    # low-rank estimate: norm of the residual projected onto the enrichment
    # frames (a lower bound on the true residual norm)
    fn = tt_norm(f)
    if rho1 > 0 or rho2 > 0:
        z = enrich_residual(A, x, f, (rho1, rho2), z_prev=z)
        report.residual_estimate = tt_norm(z) / fn if fn > 0 else tt_norm(z)
    report.wall_s = time.perf_counter() - t_start
    return x, report
