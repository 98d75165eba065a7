"""Dense and sparse linear-algebra kernels.

Truncated SVD with a Frobenius-norm discard rule, thin QR, sparse
matrix-vector products, Kronecker application without forming Kronecker
products, and a restarted right-preconditioned GMRES with true residuals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from . import _kernels


class GmresBreakdown(RuntimeError):
    """Raised when GMRES encounters non-finite values."""


@dataclass(frozen=True)
class GmresConfig:
    tolerance: float = 1e-10
    max_iterations: int = 500
    restart: int = 30

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")
        if self.restart < 1:
            raise ValueError("restart must be >= 1")


@dataclass
class GmresResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool
    stagnated: bool = False

    def __iter__(self):
        # allow: x, iterations, residual = gmres(...)
        return iter((self.x, self.iterations, self.residual))


def svd_truncate(M, eps):
    """Truncated SVD keeping the smallest rank r with ||discarded|| <= eps*||M||_F.

    Returns (U, sigma, V, r) with U, V having orthonormal columns and sigma
    nonincreasing and positive. eps is relative to the Frobenius norm.
    """
    M = np.asarray(M, dtype=np.float64)
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if M.size and not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    if M.ndim != 2:
        raise ValueError("expected a matrix")
    U, s, Vh = np.linalg.svd(M, full_matrices=False)
    r = truncation_rank(s, eps)
    return U[:, :r], s[:r].copy(), Vh[:r].T.copy(), r


def truncation_rank(sigma, eps):
    """Smallest r such that ||sigma[r:]||_2 <= eps * ||sigma||_2."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.size == 0:
        return 0
    sq = sigma[::-1] ** 2
    tails = np.sqrt(np.concatenate(([0.0], np.cumsum(sq))))[::-1]
    # tails[r] = ||sigma[r:]||_2; find smallest r with tails[r] <= eps*tails[0]
    ok = tails <= eps * tails[0]
    return int(np.argmax(ok)) if ok.any() else sigma.size


def qr_thin(M):
    """Economy QR: M = Q R with Q of shape (m, min(m, n)), orthonormal columns."""
    M = np.asarray(M, dtype=np.float64)
    if M.size and not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    Q, R = np.linalg.qr(M, mode="reduced")
    return Q, R


def spmv(S, x):
    """Sparse matrix-vector product through the active kernel backend."""
    x = np.asarray(x, dtype=np.float64)
    if S.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {S.shape} @ {x.shape}")
    S = sps.csr_matrix(S)
    return _kernels.csr_matvec(*_kernels.csr_parts(S), x)


def kron_apply(W, V, Y):
    """Return V @ Y @ W, i.e. unvec((W^T (x) V) vec(Y)) without forming the product."""
    Y = np.asarray(Y, dtype=np.float64)
    if V.shape[1] != Y.shape[0] or Y.shape[1] != W.shape[0]:
        raise ValueError("dimension mismatch in kron_apply")
    return V @ Y @ W


def gmres(apply_A, apply_P_inv, b, cfg: GmresConfig = GmresConfig()):
    """Restarted GMRES with right preconditioning.

    Solves A x = b where ``apply_A(v)`` returns A v and ``apply_P_inv(v)``
    applies the preconditioner inverse (None for unpreconditioned). Right
    preconditioning means the reported residuals are true residuals
    ||b - A x|| / ||b||. Returns a GmresResult; ``converged`` is False when
    the iteration budget is exhausted or the solve stagnates.
    """
    b = np.asarray(b, dtype=np.float64).ravel()
    if not np.all(np.isfinite(b)):
        raise GmresBreakdown("right-hand side has non-finite entries")
    if apply_P_inv is None:
        apply_P_inv = lambda v: v
    n = b.shape[0]
    beta0 = np.linalg.norm(b)
    if beta0 == 0.0:
        return GmresResult(np.zeros(n), 0, 0.0, True)

    x = np.zeros(n)
    r = b.copy()
    relres = 1.0
    total = 0
    stagnated = False
    while total < cfg.max_iterations:
        relres_enter = relres
        m = min(cfg.restart, cfg.max_iterations - total)
        V = np.zeros((n, m + 1))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        beta = np.linalg.norm(r)
        if beta == 0.0:
            return GmresResult(x, total, 0.0, True)
        V[:, 0] = r / beta
        g = np.zeros(m + 1)
        g[0] = beta
        k_used = 0
        for k in range(m):
            w = np.asarray(apply_A(apply_P_inv(V[:, k])), dtype=np.float64)
            if np.may_share_memory(w, V):
                # identity-like callbacks can hand back the basis column
                # itself; the in-place orthogonalization below must not
                # corrupt the Krylov basis
                w = w.copy()
            if not np.all(np.isfinite(w)):
                raise GmresBreakdown("non-finite vector produced at iteration %d" % (total + k + 1))
            for i in range(k + 1):
                H[i, k] = np.dot(w, V[:, i])
                w -= H[i, k] * V[:, i]
            H[k + 1, k] = np.linalg.norm(w)
            if H[k + 1, k] > 0:
                V[:, k + 1] = w / H[k + 1, k]
            # apply stored Givens rotations to the new column
            for i in range(k):
                t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = t
            # new rotation annihilating H[k+1, k]
            denom = np.hypot(H[k, k], H[k + 1, k])
            if denom == 0.0:
                cs[k], sn[k] = 1.0, 0.0
            else:
                cs[k], sn[k] = H[k, k] / denom, H[k + 1, k] / denom
            H[k, k] = cs[k] * H[k, k] + sn[k] * H[k + 1, k]
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            k_used = k + 1
            if abs(g[k + 1]) / beta0 <= cfg.tolerance:
                break
        y = np.linalg.solve(H[:k_used, :k_used], g[:k_used])
        x = x + apply_P_inv(V[:, :k_used] @ y)
        total += k_used
        r = b - apply_A(x)
        relres = np.linalg.norm(r) / beta0
        if relres <= cfg.tolerance:
            return GmresResult(x, total, relres, True)
        if k_used == m and relres > 0.999 * relres_enter:
            stagnated = True
            break
    return GmresResult(x, total, relres, False, stagnated=stagnated)
