"""Dense sequential reference solvers for the discretized Riccati equation.

These oracles never touch the TT machinery: they march the implicit Euler
recursion slice by slice, or assemble the stacked space-time matrix outright,
with dense n^2 x n^2 linear algebra. Agreement with the all-at-once TT solver
is then evidence for both the discretization and the solver. Restricted to
small problems by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dre import ControlSystem, TimeGrid
from .tt import TTVector, extract_timeslice, tt_from_dense

_MAX_DENSE_N = 64            # slice solves build n^2 x n^2 matrices
_MAX_DENSE_SPACETIME = 5000  # all-at-once dense system dimension n_t * n^2


def _vecF(P):
    return P.reshape(-1, order="F")


def _unvecF(v, n):
    return v.reshape(n, n, order="F")


@dataclass
class DenseTrajectory:
    """Dense slices P^j at times (j-1)*tau plus the terminal value P(t_f)."""

    times: np.ndarray     # (n_t,)
    slices: np.ndarray    # (n_t, n, n)
    terminal: np.ndarray  # (n, n)

    @property
    def n_t(self):
        return self.slices.shape[0]

    @property
    def n(self):
        return self.slices.shape[1]


def _terminal_value(E, CtC):
    """P(t_f) from E^T P E = C^T C (dense, invertible E)."""
    Z = np.linalg.solve(E.T, CtC)       # Z = P E
    return np.linalg.solve(E.T, Z.T).T


def sequential_dre(sys: ControlSystem, grid: TimeGrid, tol=1e-12, max_newton=100):
    """March P^{n_t}, ..., P^1 backward from the terminal value.

    Each step solves E^T P^{j+1} E - E^T P^j E
    + tau (A^T P^j E + E^T P^j A - E^T P^j B B^T P^j E + C^T C) = 0 for P^j:
    a dense Newton iteration on the vectorized n^2 x n^2 system, warm-started
    at P^{j+1} and symmetrized every update, until the step residual drops
    below tol (relative to the step data)."""
    n = sys.n
    if n > _MAX_DENSE_N:
        raise ValueError(f"sequential oracle limited to n <= {_MAX_DENSE_N}")
    E = sys.E.toarray()
    A = sys.A.toarray()
    BBt = sys.B @ sys.B.T
    CtC = sys.C.T @ sys.C
    tau = grid.tau

    Et, At = E.T, A.T
    EkE = np.kron(Et, Et)
    Lyap = np.kron(Et, At) + np.kron(At, Et)  # vec_F(A^T P E + E^T P A)

    P_f = _terminal_value(E, CtC)
    slices = np.empty((grid.n_t, n, n))
    P_next = P_f
    for j in range(grid.n_t, 0, -1):
        target = Et @ P_next @ E + tau * CtC
        scale = max(np.linalg.norm(target), 1.0)
        X = P_next.copy()
        ok = False
        for _ in range(max_newton):
            EXBBt = Et @ X @ BBt
            resid = (target - Et @ X @ E + tau * (At @ X @ E + Et @ X @ A)
                     - tau * EXBBt @ X @ E)
            if np.linalg.norm(resid) <= tol * scale:
                ok = True
                break
            K = -EkE + tau * Lyap
            K -= tau * (np.kron(EXBBt, Et) + np.kron(Et, EXBBt))
            rhs = -_vecF(target) - tau * _vecF(EXBBt @ X @ E)
            P = _unvecF(np.linalg.solve(K, rhs), n)
            X = 0.5 * (P + P.T)
        if not ok:
            raise RuntimeError(f"per-step Riccati Newton did not reach {tol} at step {j}")
        slices[j - 1] = X
        P_next = X
    return DenseTrajectory(times=grid.times.copy(), slices=slices, terminal=P_f)


def dense_allatonce(sys: ControlSystem, grid: TimeGrid, p_current):
    """One dense solve of the space-time system linearized at p_current.

    Assembles the full n_t n^2 x n_t n^2 matrix (time coupling, Lyapunov
    terms, and the linearization blocks at p_current) plus the right-hand side
    with the quadratic correction, and solves directly. Iterating this map is
    the dense analogue of the TT Newton iteration; its fixed point is the
    discrete Riccati solution."""
    n, n_t = sys.n, grid.n_t
    m = n * n
    N = n_t * m
    if N > _MAX_DENSE_SPACETIME:
        raise ValueError(f"dense space-time system limited to {_MAX_DENSE_SPACETIME} unknowns")
    p_current = np.asarray(p_current, dtype=np.float64).reshape(N)
    E = sys.E.toarray()
    A = sys.A.toarray()
    BBt = sys.B @ sys.B.T
    CtC = sys.C.T @ sys.C
    tau = grid.tau
    Et, At = E.T, A.T
    EkE = np.kron(Et, Et)
    Lyap = np.kron(Et, At) + np.kron(At, Et)

    M_big = np.zeros((N, N))
    rhs = np.tile(-_vecF(CtC), n_t)
    rhs[-m:] -= _vecF(CtC) / tau
    for j in range(n_t):
        rows = slice(j * m, (j + 1) * m)
        Pj = _unvecF(p_current[rows], n)
        EPBBt = Et @ Pj @ BBt
        M_big[rows, rows] = (Lyap - EkE / tau
                             - np.kron(EPBBt, Et) - np.kron(Et, EPBBt))
        if j + 1 < n_t:
            M_big[rows, slice((j + 1) * m, (j + 2) * m)] = EkE / tau
        rhs[rows] -= _vecF(EPBBt @ Pj @ E)
    return np.linalg.solve(M_big, rhs)


def dense_newton(sys: ControlSystem, grid: TimeGrid, tol=1e-12, max_iterations=50):
    """Iterate dense_allatonce to its fixed point; returns a DenseTrajectory."""
    n, n_t = sys.n, grid.n_t
    p = np.zeros(n_t * n * n)
    for _ in range(max_iterations):
        p_new = dense_allatonce(sys, grid, p)
        step = np.linalg.norm(p_new - p)
        p = p_new
        if step <= tol * max(np.linalg.norm(p), 1e-300):
            break
    slices = np.empty((n_t, n, n))
    for j in range(n_t):
        slices[j] = _unvecF(p[j * n * n:(j + 1) * n * n], n)
    terminal = _terminal_value(sys.E.toarray(), sys.C.T @ sys.C)
    return DenseTrajectory(times=grid.times.copy(), slices=slices, terminal=terminal)


def trajectory_to_tt(traj: DenseTrajectory, eps=1e-14):
    """TT compression of a dense trajectory (slice matrices transposed into
    the (time, column, row) tensor layout)."""
    return tt_from_dense(traj.slices.transpose(0, 2, 1), eps)


def trajectory_vec(traj: DenseTrajectory):
    """Stacked column-major slice vectors, the dense solver's unknown layout."""
    return np.concatenate([_vecF(traj.slices[j]) for j in range(traj.n_t)])


def compare_trajectory(p: TTVector, ref: DenseTrajectory):
    """(max relative slice error, aggregate relative Frobenius error)."""
    if (p.n_t, p.n) != (ref.n_t, ref.n):
        raise ValueError("size mismatch between TT solution and trajectory")
    max_rel = 0.0
    num2 = 0.0
    den2 = 0.0
    for j in range(1, p.n_t + 1):
        Pj = extract_timeslice(p, j).dense()
        R = ref.slices[j - 1]
        diff = np.linalg.norm(Pj - R)
        nref = np.linalg.norm(R)
        max_rel = max(max_rel, diff / max(nref, 1e-300))
        num2 += diff * diff
        den2 += nref * nref
    return max_rel, float(np.sqrt(num2 / max(den2, 1e-300)))
