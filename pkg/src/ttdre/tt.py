"""Three-core tensor-train representation of space-time vectors and operators.

A TTVector stores a tensor T of shape (n_t, n, n) as

    T[i1, i2, i3] = sum_{s1, s2} core1[i1, s1] * core2[s1, i2, s2] * core3[s2, i3]

with TT ranks (r1, r2). The flat vector view is the C-order ravel of T, so a
Kronecker triple A1 (x) A2 (x) A3 acts per time slice as
vec(P) -> vec(A3 P A2^T) where i2 indexes columns and i3 rows of the slice.

TTOperator keeps linear operators as an explicit sum of Kronecker triples
(time factor, middle spatial factor, last spatial factor); spatial factors may
be sparse matrices or factored low-rank products, and are never densified by
the solver paths.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sps

from . import _kernels
from .linalg import qr_thin

_DENSE_GUARD = 50_000_000  # max entries materialized by tt_to_dense


@dataclass
class TTVector:
    core1: np.ndarray  # (n_t, r1)
    core2: np.ndarray  # (r1, n, r2)
    core3: np.ndarray  # (r2, n)
    orth: Optional[int] = None  # core toward which the TT is orthogonalized

    def __post_init__(self):
        self.core1 = np.ascontiguousarray(self.core1, dtype=np.float64)
        self.core2 = np.ascontiguousarray(self.core2, dtype=np.float64)
        self.core3 = np.ascontiguousarray(self.core3, dtype=np.float64)
        if self.core1.ndim != 2 or self.core2.ndim != 3 or self.core3.ndim != 2:
            raise ValueError("core dimensions must be (n_t,r1), (r1,n,r2), (r2,n)")
        if self.core1.shape[1] != self.core2.shape[0] or self.core2.shape[2] != self.core3.shape[0]:
            raise ValueError("inconsistent TT ranks between cores")

    @property
    def n_t(self):
        return self.core1.shape[0]

    @property
    def n(self):
        return self.core2.shape[1]

    @property
    def ranks(self):
        return (self.core1.shape[1], self.core2.shape[2])

    def copy(self):
        return TTVector(self.core1.copy(), self.core2.copy(), self.core3.copy(), self.orth)

    def validate(self):
        for c in (self.core1, self.core2, self.core3):
            if c.size and not np.all(np.isfinite(c)):
                raise ValueError("TT core has non-finite entries")
        return self


def tt_zero(n_t, n):
    """Canonical zero: ranks (1, 1) with zero cores."""
    return TTVector(np.zeros((n_t, 1)), np.zeros((1, n, 1)), np.zeros((1, n)))


def tt_rank1(u, v, w):
    """Rank-(1,1) tensor u (x) v (x) w; slices are u[j] * outer(w, v)."""
    u = np.asarray(u, float).ravel()
    v = np.asarray(v, float).ravel()
    w = np.asarray(w, float).ravel()
    return TTVector(u[:, None], v[None, :, None], w[None, :])


def is_zero(v: TTVector):
    return (
        0 in v.ranks
        or not np.any(v.core1)
        or not np.any(v.core2)
        or not np.any(v.core3)
    )


# ---------------------------------------------------------------------------
# dense conversion

def tt_from_dense(T, eps):
    """TT approximation of a dense (n_t, n, n) tensor by two truncated SVDs.

    Relative Frobenius error is at most sqrt(2)*eps."""
    T = np.asarray(T, dtype=np.float64)
    n_t, n, n2 = T.shape
    if n != n2:
        raise ValueError("expected shape (n_t, n, n)")
    nrm = np.linalg.norm(T)
    if nrm == 0.0:
        return tt_zero(n_t, n)
    tau = eps * nrm / np.sqrt(2.0)
    U1, s1, V1h = np.linalg.svd(T.reshape(n_t, n * n), full_matrices=False)
    r1 = max(_rank_abs(s1, tau), 1)
    core1 = U1[:, :r1]
    rest = (s1[:r1, None] * V1h[:r1]).reshape(r1 * n, n)
    U2, s2, V2h = np.linalg.svd(rest, full_matrices=False)
    r2 = max(_rank_abs(s2, tau), 1)
    core2 = U2[:, :r2].reshape(r1, n, r2)
    core3 = s2[:r2, None] * V2h[:r2]
    return TTVector(core1, core2, core3, orth=3)


def tt_to_dense(v: TTVector):
    """Exact contraction of the three cores into an (n_t, n, n) tensor."""
    if v.n_t * v.n * v.n > _DENSE_GUARD:
        raise ValueError("tensor too large to densify")
    if 0 in v.ranks:
        return np.zeros((v.n_t, v.n, v.n))
    return np.einsum("ia,amb,bk->imk", v.core1, v.core2, v.core3, optimize=True)


def tt_vec(v: TTVector):
    """Flat vector view (C-order ravel of the dense tensor)."""
    return tt_to_dense(v).ravel()


def _rank_abs(sigma, tau):
    """Smallest r with ||sigma[r:]||_2 <= tau (absolute threshold)."""
    if len(sigma) == 0:
        return 0
    tails = np.sqrt(np.concatenate(([0.0], np.cumsum(sigma[::-1] ** 2))))[::-1]
    ok = tails <= tau
    return int(np.argmax(ok)) if ok.any() else len(sigma)


# ---------------------------------------------------------------------------
# orthogonalization

def _orth_core3_rows(core2, core3):
    """Make core3 row-orthonormal, absorbing the factor into core2."""
    Q, R = qr_thin(core3.T)
    return core2 @ R.T, np.ascontiguousarray(Q.T)


def _orth_core2_right(core1, core2):
    """Make core2's right unfolding row-orthonormal, absorbing into core1."""
    r1, n, r2 = core2.shape
    Q, R = qr_thin(core2.reshape(r1, n * r2).T)
    return core1 @ R.T, np.ascontiguousarray(Q.T.reshape(-1, n, r2))


def _orth_core1(core1, core2):
    """Make core1 column-orthonormal, absorbing into core2."""
    Q, R = qr_thin(core1)
    return Q, np.einsum("ab,bmc->amc", R, core2)


def _orth_core2_left(core2, core3):
    """Make core2's left unfolding column-orthonormal, absorbing into core3."""
    r1, n, r2 = core2.shape
    Q, R = qr_thin(core2.reshape(r1 * n, r2))
    return np.ascontiguousarray(Q.reshape(r1, n, -1)), R @ core3


def orthogonalize(v: TTVector, k: int):
    """Return the same tensor with all cores orthogonalized toward core k."""
    if k not in (1, 2, 3):
        raise ValueError("k must be 1, 2 or 3")
    if 0 in v.ranks:
        v = tt_zero(v.n_t, v.n)
    u1, u2, u3 = v.core1.copy(), v.core2.copy(), v.core3.copy()
    if k == 1:
        u2, u3 = _orth_core3_rows(u2, u3)
        u1, u2 = _orth_core2_right(u1, u2)
    elif k == 2:
        u1, u2 = _orth_core1(u1, u2)
        u2, u3 = _orth_core3_rows(u2, u3)
    else:
        u1, u2 = _orth_core1(u1, u2)
        u2, u3 = _orth_core2_left(u2, u3)
    return TTVector(u1, u2, u3, orth=k)


# ---------------------------------------------------------------------------
# rounding and arithmetic

def tt_round(v: TTVector, eps, rmax=None):
    """Rank truncation with relative Frobenius error at most sqrt(2)*eps.

    Sweeps right-to-left orthogonalization then left-to-right truncated SVDs,
    each step discarding at most eps/sqrt(2) of the tensor norm. Optional rmax
    = (r1_max, r2_max) enforces hard rank caps. Result is orthogonalized
    toward core 3."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    cap1, cap2 = rmax if rmax is not None else (None, None)
    if 0 in v.ranks or is_zero(v):
        return tt_zero(v.n_t, v.n)
    u1, u2, u3 = v.core1, v.core2, v.core3
    u2, u3 = _orth_core3_rows(u2.copy(), u3.copy())
    u1, u2 = _orth_core2_right(u1.copy(), u2)
    nrm = np.linalg.norm(u1)
    if nrm == 0.0:
        return tt_zero(v.n_t, v.n)
    tau = eps * nrm / np.sqrt(2.0)

    U, s, Vh = np.linalg.svd(u1, full_matrices=False)
    r1 = _rank_abs(s, tau)
    if cap1 is not None:
        r1 = min(r1, cap1)
    if r1 == 0:
        return tt_zero(v.n_t, v.n)
    u1 = U[:, :r1]
    u2 = np.einsum("ab,bmc->amc", s[:r1, None] * Vh[:r1], u2)

    r2 = u2.shape[2]
    L2 = u2.reshape(r1 * v.n, r2)
    U2, s2, V2h = np.linalg.svd(L2, full_matrices=False)
    r2n = _rank_abs(s2, tau)
    if cap2 is not None:
        r2n = min(r2n, cap2)
    if r2n == 0:
        return tt_zero(v.n_t, v.n)
    u2 = np.ascontiguousarray(U2[:, :r2n].reshape(r1, v.n, r2n))
    u3 = (s2[:r2n, None] * V2h[:r2n]) @ u3
    return TTVector(u1, u2, u3, orth=3)


def tt_add(a: TTVector, b: TTVector):
    """Exact sum; ranks add blockwise."""
    if (a.n_t, a.n) != (b.n_t, b.n):
        raise ValueError("mode-size mismatch in tt_add")
    if is_zero(b):
        return a.copy()
    if is_zero(a):
        return b.copy()
    r1a, r2a = a.ranks
    r1b, r2b = b.ranks
    core1 = np.hstack([a.core1, b.core1])
    core3 = np.vstack([a.core3, b.core3])
    core2 = np.zeros((r1a + r1b, a.n, r2a + r2b))
    core2[:r1a, :, :r2a] = a.core2
    core2[r1a:, :, r2a:] = b.core2
    return TTVector(core1, core2, core3)


def tt_scale(a: TTVector, alpha):
    out = a.copy()
    out.core1 = out.core1 * float(alpha)
    return out


def tt_dot(a: TTVector, b: TTVector):
    """Euclidean inner product via core contractions (never densifies)."""
    if (a.n_t, a.n) != (b.n_t, b.n):
        raise ValueError("mode-size mismatch in tt_dot")
    if is_zero(a) or is_zero(b):
        return 0.0
    G = a.core1.T @ b.core1  # (r1a, r1b)
    H = np.einsum("st,smb->tmb", G, a.core2, optimize=True)
    K = np.einsum("tmb,tmc->bc", H, b.core2, optimize=True)
    return float(np.sum(K * (a.core3 @ b.core3.T)))


def tt_norm(a: TTVector):
    return float(np.sqrt(max(tt_dot(a, a), 0.0)))


# ---------------------------------------------------------------------------
# time slices

@dataclass
class Timeslice:
    """Factored time slice P^j = left @ right.T with rank <= r2."""

    left: np.ndarray   # (n, r2), shared across slices (core3^T)
    right: np.ndarray  # (n, r2)

    def dense(self):
        return self.left @ self.right.T


def extract_timeslice(v: TTVector, j: int):
    """Factored slice P^j (1-based j) with vec(P^j) equal to slice j of dense(v)."""
    if not 1 <= j <= v.n_t:
        raise IndexError(f"time index {j} out of range 1..{v.n_t}")
    right = np.tensordot(v.core1[j - 1], v.core2, axes=(0, 0))  # (n, r2)
    return Timeslice(left=v.core3.T.copy(), right=right)


# ---------------------------------------------------------------------------
# frame matrices

@dataclass
class FrameMatrix:
    """Interface factors of U_{!=k}: maps core-k entries to the full tensor."""

    k: int
    source: TTVector

    def apply(self, w):
        """U_{!=k} vec_T(w): the TT with core k replaced by w."""
        v = self.source
        if self.k == 1:
            w = np.asarray(w, float).reshape(v.n_t, v.ranks[0])
            return TTVector(w, v.core2.copy(), v.core3.copy())
        if self.k == 2:
            w = np.asarray(w, float).reshape(v.ranks[0], v.n, v.ranks[1])
            return TTVector(v.core1.copy(), w, v.core3.copy())
        w = np.asarray(w, float).reshape(v.ranks[1], v.n)
        return TTVector(v.core1.copy(), v.core2.copy(), w)

    def apply_t(self, p: TTVector):
        """U_{!=k}^T applied to a TT vector, returned in core-k shape."""
        v = self.source
        H3 = v.core3 @ p.core3.T  # (r2, p2)
        if self.k == 1:
            R = np.einsum("smb,tmc,bc->ts", v.core2, p.core2, H3, optimize=True)
            return p.core1 @ R
        G1 = v.core1.T @ p.core1  # (r1, p1)
        if self.k == 2:
            return np.einsum("st,tmc,bc->smb", G1, p.core2, H3, optimize=True)
        tmp = np.einsum("st,tmc->smc", G1, p.core2, optimize=True)
        K = np.einsum("smb,smc->bc", v.core2, tmp, optimize=True)
        return K @ p.core3

    def to_dense(self):
        """Explicit U_{!=k} matrix; small sizes only (tests)."""
        v = self.source
        n_t, n = v.n_t, v.n
        r1, r2 = v.ranks
        if self.k == 1:
            Z = np.tensordot(v.core2, v.core3, axes=(2, 0))  # (r1, n, n)
            Z = Z.transpose(1, 2, 0).reshape(n * n, r1)
            return np.kron(np.eye(n_t), Z)
        if self.k == 2:
            return np.kron(v.core1, np.kron(np.eye(n), v.core3.T))
        G = np.einsum("ia,amb->imb", v.core1, v.core2)  # (n_t, n, r2)
        F = np.einsum("imb,kK->imkbK", G, np.eye(n))
        return F.reshape(n_t * n * n, r2 * n)


def build_frame(v: TTVector, k: int):
    if v.orth != k:
        raise ValueError(f"vector must be orthogonalized toward core {k} (have {v.orth})")
    return FrameMatrix(k, v)


# ---------------------------------------------------------------------------
# operators: sums of Kronecker triples

@dataclass
class LowRank:
    """Factored spatial matrix left @ right.T (thin factors, width = rank)."""

    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        self.left = np.atleast_2d(np.asarray(self.left, float))
        self.right = np.atleast_2d(np.asarray(self.right, float))
        if self.left.shape[1] != self.right.shape[1]:
            raise ValueError("factor width mismatch")

    @property
    def width(self):
        return self.left.shape[1]

    def dense(self):
        return self.left @ self.right.T


@dataclass
class KronTerm:
    """coeff * (tfac (x) s2 (x) s3); None factors mean identity."""

    coeff: float = 1.0
    tfac: object = None  # None | 1-D diag | 2-D dense | scipy sparse
    s2: object = None    # None | scipy sparse | ndarray | LowRank
    s3: object = None
    # number of elementary rank-1 Kronecker triples this term aggregates;
    # None means the product of the low-rank factor widths
    multiplicity: Optional[int] = None

    def width(self):
        if self.multiplicity is not None:
            return self.multiplicity
        w = 1
        for f in (self.s2, self.s3):
            if isinstance(f, LowRank):
                w *= f.width
        return w


@dataclass
class TTOperator:
    n_t: int
    n: int
    terms: list = field(default_factory=list)

    @property
    def kron_term_count(self):
        """Number of elementary Kronecker triples (low-rank factors expanded)."""
        return sum(t.width() for t in self.terms)

    def scaled(self, alpha):
        out = TTOperator(self.n_t, self.n, [])
        for t in self.terms:
            out.terms.append(
                KronTerm(t.coeff * alpha, t.tfac, t.s2, t.s3, t.multiplicity))
        return out

    def plus(self, other):
        if (self.n_t, self.n) != (other.n_t, other.n):
            raise ValueError("operator size mismatch")
        return TTOperator(self.n_t, self.n, list(self.terms) + list(other.terms))


def identity_op(n_t, n):
    return TTOperator(n_t, n, [KronTerm(1.0, None, None, None)])


def apply_time_factor(tfac, core1):
    if tfac is None:
        return core1.copy()
    if isinstance(tfac, np.ndarray) and tfac.ndim == 1:
        return tfac[:, None] * core1
    return tfac @ core1


def sparse_is_identity(S):
    """Cached structural identity test (common: E = I mass matrices)."""
    flag = getattr(S, "_tt_identity", None)
    if flag is None:
        flag = bool(S.shape[0] == S.shape[1] and S.nnz == S.shape[0]
                    and np.all(S.diagonal() == 1.0))
        try:
            S._tt_identity = flag
        except AttributeError:  # pragma: no cover - exotic sparse classes
            pass
    return flag


def apply_spatial_mid(S, core2):
    """out[a,i,b] = sum_j S[i,j] core2[a,j,b]."""
    if S is None:
        return core2.copy()
    if isinstance(S, LowRank):
        tmp = np.tensordot(core2, S.right, axes=(1, 0))  # (r1, r2, w)
        out = np.tensordot(tmp, S.left, axes=(2, 1))     # (r1, r2, n)
        return np.ascontiguousarray(out.transpose(0, 2, 1))
    if sps.issparse(S):
        if sparse_is_identity(S):
            return core2.copy()
        S = sps.csr_matrix(S)
        return _kernels.csr_apply_mid(*_kernels.csr_parts(S), np.ascontiguousarray(core2), S.shape[0])
    return np.einsum("ij,ajb->aib", np.asarray(S), core2, optimize=True)


def apply_spatial_rows(S, core3):
    """out[b,i] = sum_j S[i,j] core3[b,j], i.e. core3 @ S.T."""
    if S is None:
        return core3.copy()
    if isinstance(S, LowRank):
        return (core3 @ S.right) @ S.left.T
    if sps.issparse(S):
        if sparse_is_identity(S):
            return core3.copy()
        return (S @ core3.T).T
    return core3 @ np.asarray(S).T


def spatial_dense(S, n):
    if S is None:
        return np.eye(n)
    if isinstance(S, LowRank):
        return S.dense()
    if sps.issparse(S):
        return S.toarray()
    return np.asarray(S, float)


def time_dense(tfac, n_t):
    if tfac is None:
        return np.eye(n_t)
    if isinstance(tfac, np.ndarray) and tfac.ndim == 1:
        return np.diag(tfac)
    if sps.issparse(tfac):
        return tfac.toarray()
    return np.asarray(tfac, float)


def term_apply(term: KronTerm, v: TTVector):
    core1 = term.coeff * apply_time_factor(term.tfac, v.core1)
    core2 = apply_spatial_mid(term.s2, v.core2)
    core3 = apply_spatial_rows(term.s3, v.core3)
    return TTVector(core1, core2, core3)


def tt_op_apply(A: TTOperator, v: TTVector):
    """Exact operator application; output ranks are sums over terms."""
    if (A.n_t, A.n) != (v.n_t, v.n):
        raise ValueError("operator/vector size mismatch")
    out = tt_zero(v.n_t, v.n)
    for term in A.terms:
        out = tt_add(out, term_apply(term, v))
    return out


def tt_op_apply_rounded(A: TTOperator, v: TTVector, eps, rmax=None, chunk=6):
    """A*v with incremental rounding every `chunk` accumulated terms."""
    out = tt_zero(v.n_t, v.n)
    pending = 0
    for term in A.terms:
        out = tt_add(out, term_apply(term, v))
        pending += 1
        if pending >= chunk:
            out = tt_round(out, eps, rmax)
            pending = 0
    return tt_round(out, eps, rmax) if pending else out


def tt_residual_rounded(A: TTOperator, x: TTVector, f: TTVector, eps, rmax=None, chunk=6):
    """Approximate f - A x with incremental rounding (enrichment quality)."""
    out = f.copy()
    pending = 0
    for term in A.terms:
        out = tt_add(out, tt_scale(term_apply(term, x), -1.0))
        pending += 1
        if pending >= chunk:
            out = tt_round(out, eps, rmax)
            pending = 0
    return tt_round(out, eps, rmax)


def op_dense(A: TTOperator):
    """Materialize the full matrix; small sizes only (tests)."""
    N = A.n_t * A.n * A.n
    if N > 20_000:
        raise ValueError("operator too large to densify")
    out = np.zeros((N, N))
    for t in A.terms:
        out += t.coeff * np.kron(
            time_dense(t.tfac, A.n_t),
            np.kron(spatial_dense(t.s2, A.n), spatial_dense(t.s3, A.n)),
        )
    return out


# ---------------------------------------------------------------------------
# serialization

_MAGIC = b"TTVCORE3"
_VERSION = 1


def tt_save(v: TTVector, path):
    """Binary container (magic, dims, ranks, little-endian float64 cores) + JSON sidecar."""
    v.validate()
    path = str(path)
    r1, r2 = v.ranks
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<5q", _VERSION, v.n_t, v.n, r1, r2))
        for core in (v.core1, v.core2, v.core3):
            fh.write(np.ascontiguousarray(core, dtype="<f8").tobytes())
    meta = {
        "format": "tt-vector",
        "version": _VERSION,
        "n_t": v.n_t,
        "n": v.n,
        "ranks": [r1, r2],
        "norm": tt_norm(v),
        "orth": v.orth,
    }
    with open(path + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def tt_load(path):
    path = str(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError("not a TT vector container")
        version, n_t, n, r1, r2 = struct.unpack("<5q", fh.read(40))
        if version != _VERSION:
            raise ValueError(f"unsupported container version {version}")
        def read(shape):
            count = int(np.prod(shape))
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError("truncated TT vector container")
            return np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        core1 = read((n_t, r1))
        core2 = read((r1, n, r2))
        core3 = read((r2, n))
        if fh.read(1):
            raise ValueError("trailing bytes in TT vector container")
    orth = None
    try:
        with open(path + ".json") as fh:
            orth = json.load(fh).get("orth")
    except (OSError, json.JSONDecodeError):
        pass
    return TTVector(core1, core2, core3, orth).validate()
