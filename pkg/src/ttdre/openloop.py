"""Open-loop tracking control via one symmetric space-time KKT solve.

Implicit-Euler discretization of the linear tracking problem

    min  1/2 sum_j tau ||C(x_j - x_d(t_j))||^2 + beta/2 sum_j tau ||u_j||^2
         + 1/2 ||C(x_nt - x_d(t_f))||^2
    s.t. E x_j = E x_{j-1} + tau A x_j + tau B u_j,   x_0 given,

with states at t_j = j tau (so the last state sits at t_f). Stationarity of
the Lagrangian in (x, u, p) gives one sparse symmetric saddle-point system
solved directly; the low rank of the solution matrices is what the tensor
solver exploits in the nonlinear setting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla


@dataclass
class KktSystem:
    n: int
    m: int
    n_t: int
    tau: float
    beta: float
    matrix: sps.csc_matrix          # (2 n + m) n_t square, symmetric
    rhs: np.ndarray


@dataclass
class OpenLoopSolution:
    X: np.ndarray                   # states, (n, n_t), column j-1 at t_j
    U: np.ndarray                   # controls, (m, n_t)
    P: np.ndarray                   # adjoints, (n, n_t)
    residual: float                 # relative linear-system residual


def assemble_kkt(problem, beta=None, tau=None):
    """Build the saddle-point system for a problem with sys/grid/x0/x_d.

    problem.x_d must hold desired states column-wise at t_j = j tau,
    j = 1..n_t (its last column is the terminal target). Row blocks are the
    adjoint equation (d/dx), the gradient equation (d/du), and the state
    equation; unknown ordering is [x; u; p], each j-major."""
    sys = problem.sys
    grid = problem.grid
    if tau is not None and abs(tau - grid.tau) > 1e-12 * max(1.0, grid.tau):
        raise ValueError("tau inconsistent with the problem's time grid")
    if beta is None:
        beta = getattr(problem, "beta", 1.0)
    n, m, n_t = sys.n, sys.n_inputs, grid.n_t
    t = grid.tau
    x_d = np.asarray(problem.x_d, dtype=float)
    if x_d.shape != (n, n_t):
        raise ValueError(f"x_d must be (n, n_t) = {(n, n_t)}, got {x_d.shape}")

    E, A, B, C = sys.E, sys.A, sys.B, sys.C
    CtC = sps.csr_matrix(C.T @ C) if sps.issparse(C) else sps.csr_matrix(np.asarray(C).T @ C)
    L = (E - t * A).tocsr()
    I_t = sps.identity(n_t, format="csr")
    if n_t > 1:
        G = sps.diags([-np.ones(n_t - 1)], [-1], shape=(n_t, n_t), format="csr")
    else:
        G = sps.csr_matrix((1, 1))
    e_last = sps.csr_matrix(([1.0], ([n_t - 1], [n_t - 1])), shape=(n_t, n_t))

    H_x = sps.kron(I_t, t * CtC) + sps.kron(e_last, CtC)
    H_u = (beta * t) * sps.identity(m * n_t, format="csr")
    K = -(sps.kron(I_t, L) + sps.kron(G, E))
    N = sps.kron(I_t, t * sps.csr_matrix(B))
    matrix = sps.bmat([[H_x, None, K.T],
                       [None, H_u, N.T],
                       [K, N, None]], format="csc")

    f1 = t * (CtC @ x_d)
    f1[:, -1] += CtC @ x_d[:, -1]
    f3 = np.zeros(n * n_t)
    f3[:n] = -(E @ np.asarray(problem.x0, dtype=float))
    rhs = np.concatenate([f1.ravel(order="F"), np.zeros(m * n_t), f3])
    return KktSystem(n=n, m=m, n_t=n_t, tau=t, beta=beta, matrix=matrix, rhs=rhs)


def solve_kkt(kkt: KktSystem, tol=1e-8):
    """Sparse direct solve; raises if the relative residual exceeds tol."""
    y = spla.splu(kkt.matrix).solve(kkt.rhs)
    denom = np.linalg.norm(kkt.rhs)
    residual = np.linalg.norm(kkt.matrix @ y - kkt.rhs) / denom if denom else 0.0
    if not np.isfinite(residual) or residual > tol:
        raise RuntimeError(f"KKT solve residual {residual:.3e} exceeds {tol:.1e}")
    n, m, n_t = kkt.n, kkt.m, kkt.n_t
    X = y[:n * n_t].reshape(n_t, n).T
    U = y[n * n_t:(n + m) * n_t].reshape(n_t, m).T
    P = y[(n + m) * n_t:].reshape(n_t, n).T
    return OpenLoopSolution(X=X, U=U, P=P, residual=float(residual))


def block_residuals(kkt: KktSystem, sol: OpenLoopSolution):
    """Relative residual of each optimality block: adjoint, gradient, state."""
    n, m, n_t = kkt.n, kkt.m, kkt.n_t
    y = np.concatenate([sol.X.ravel(order="F"), sol.U.ravel(order="F"),
                        sol.P.ravel(order="F")])
    r = kkt.matrix @ y - kkt.rhs
    ay = kkt.matrix @ y
    out = {}
    bounds = [(0, n * n_t, "adjoint"), (n * n_t, (n + m) * n_t, "gradient"),
              ((n + m) * n_t, (2 * n + m) * n_t, "state")]
    for lo, hi, name in bounds:
        denom = max(np.linalg.norm(kkt.rhs[lo:hi]), np.linalg.norm(ay[lo:hi]), 1e-300)
        out[name] = float(np.linalg.norm(r[lo:hi]) / denom)
    return out


def solution_spectra(sol: OpenLoopSolution):
    """Singular values of the state/control/adjoint trajectory matrices."""
    return {
        "X": np.linalg.svd(sol.X, compute_uv=False),
        "U": np.linalg.svd(sol.U, compute_uv=False),
        "P": np.linalg.svd(sol.P, compute_uv=False),
    }
