"""All-at-once solution of differential Riccati equations in TT format.

The backward differential Riccati equation

    E^T P'(t) E + A^T P(t) E + E^T P(t) A - E^T P(t) B B^T P(t) E + C^T C = 0,
    E^T P(t_f) E = C^T C,

is discretized by implicit Euler on n_t uniform steps and solved for all time
slices at once. Slice j of the space-time unknown approximates P((j-1) tau),
tau = t_f / n_t; the terminal condition enters the right-hand side. Each
Newton-Kleinman step linearizes the quadratic term around the current iterate
and solves the resulting space-time linear system with AMEn, warm-started at
that iterate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sps

from .amen import AmenConfig, amen_solve
from .tt import (
    KronTerm,
    LowRank,
    TTOperator,
    TTVector,
    is_zero,
    tt_add,
    tt_dot,
    tt_norm,
    tt_residual_rounded,
    tt_round,
    tt_scale,
    tt_zero,
)


@dataclass
class ControlSystem:
    """Descriptor system (E, A, B, C): E x' = A x + B u, y = C x."""

    E: object
    A: object
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        self.E = sps.csr_matrix(self.E)
        self.A = sps.csr_matrix(self.A)
        self.B = np.atleast_2d(np.asarray(self.B, dtype=np.float64))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=np.float64))
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.E.shape != (n, n):
            raise ValueError("A and E must be square and equal-sized")
        if self.B.shape[0] != n:
            raise ValueError(f"B must have {n} rows")
        if self.C.shape[1] != n:
            raise ValueError(f"C must have {n} columns")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.B.shape[1]

    @property
    def n_outputs(self):
        return self.C.shape[0]

    @property
    def has_control(self):
        return self.B.shape[1] > 0 and bool(np.any(self.B))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, t_f]: n_t unknown slices at (j-1)*tau, j = 1..n_t.

    The terminal time t_f itself carries the known boundary value and is not
    an unknown."""

    t_f: float
    n_t: int

    def __post_init__(self):
        if self.t_f <= 0 or self.n_t < 1:
            raise ValueError("need t_f > 0 and n_t >= 1")

    @property
    def tau(self):
        return self.t_f / self.n_t

    @property
    def times(self):
        return self.tau * np.arange(self.n_t)


# ---------------------------------------------------------------------------
# assembly

def assemble_D(grid: TimeGrid):
    """Backward-difference factor: row j holds (p^{j+1} - p^j) / tau."""
    n_t, tau = grid.n_t, grid.tau
    return sps.diags(
        [np.full(n_t, -1.0 / tau), np.full(n_t - 1, 1.0 / tau)],
        [0, 1], format="csr",
    )


def assemble_static_operator(sys: ControlSystem, grid: TimeGrid):
    """Iterate-independent part: I (x) E^T (x) A^T + I (x) A^T (x) E^T + D (x) E^T (x) E^T."""
    Et = sps.csr_matrix(sys.E.T)
    At = sps.csr_matrix(sys.A.T)
    D = assemble_D(grid)
    return TTOperator(grid.n_t, sys.n, [
        KronTerm(1.0, None, Et, At),
        KronTerm(1.0, None, At, Et),
        KronTerm(1.0, D, Et, Et),
    ])


def assemble_rhs_c(sys: ControlSystem, grid: TimeGrid):
    """Constant right-hand side: slice j equals -C^T C, the last slice also
    carrying the terminal value E^T P(t_f) E = C^T C scaled by 1/tau."""
    p = sys.n_outputs
    if p == 0 or not np.any(sys.C):
        return tt_zero(grid.n_t, sys.n)
    e = np.ones(grid.n_t)
    e[-1] += 1.0 / grid.tau
    core1 = -np.outer(e, np.ones(p))
    core2 = np.zeros((p, sys.n, p))
    for k in range(p):
        core2[k, :, k] = sys.C[k]
    core3 = sys.C.copy()
    return TTVector(core1, core2, core3)


def _input_slices(sys: ControlSystem, p: TTVector):
    """L[s1] = E^T core3^T core2[s1]^T B, the thin (n, m) slices of the
    products E^T P-part B shared by the M and g assemblies."""
    U2B = np.tensordot(p.core2, sys.B, axes=(1, 0))       # (r1, r2, m)
    Q = sps.csr_matrix(sys.E.T) @ p.core3.T               # (n, r2)
    L = np.tensordot(U2B, Q, axes=(1, 1))                 # (r1, m, n)
    return np.ascontiguousarray(L.transpose(0, 2, 1))     # (r1, n, m)


def assemble_M(sys: ControlSystem, p: TTVector):
    """Linearization of the quadratic term around iterate p (positive form).

    Block j acts on a slice Q as E^T Q B B^T P^j E + E^T P^j B B^T Q E. With
    P^j = W V_j^T from the TT cores, each factor E^T P-part B B^T collapses
    to (E^T W V_j^T B) B^T: 2 r1 Kronecker terms whose spatial low-rank
    factors have width m and share the right factor B, standing for the
    2 r1 r2 elementary triples of the bond-wise expansion."""
    n_t, n = p.n_t, sys.n
    if not sys.has_control or is_zero(p):
        return TTOperator(n_t, n, [])
    r1, r2 = p.ranks
    L = _input_slices(sys, p)
    B = sys.B  # one shared right factor lets downstream solvers merge terms
    Et = sps.csr_matrix(sys.E.T)
    terms = []
    for s1 in range(r1):
        d = p.core1[:, s1].copy()
        lr = LowRank(L[s1], B)                    # E^T P-part B B^T, width m
        terms.append(KronTerm(1.0, d, lr, Et, multiplicity=r2))
        terms.append(KronTerm(1.0, d, Et, lr, multiplicity=r2))
    return TTOperator(n_t, n, terms)


def assemble_g(sys: ControlSystem, p: TTVector, eps):
    """Quadratic right-hand side: slice j is -E^T P^j B B^T P^j E.

    Built bond-chunk by bond-chunk (one chunk per first-bond index of p, each
    an exact TT of ranks (r1, m)) with rounding at eps between chunks."""
    if not sys.has_control or is_zero(p):
        return tt_zero(p.n_t, sys.n)
    r1 = p.ranks[0]
    Z2 = _input_slices(sys, p)                            # (r1, n, m)
    g = tt_zero(p.n_t, sys.n)
    for a in range(r1):
        core1 = -(p.core1 * p.core1[:, a:a + 1])
        chunk = TTVector(core1, Z2, Z2[a].T.copy())
        g = tt_round(tt_add(g, chunk), eps)
    return g


# ---------------------------------------------------------------------------
# Newton-Kleinman iteration

@dataclass(frozen=True)
class NewtonConfig:
    eps_newton: float = 1e-5
    eps_trunc: float = 1e-12
    max_iterations: int = 30
    amen: AmenConfig = field(default_factory=AmenConfig)

    def __post_init__(self):
        if self.eps_newton <= 0 or self.eps_trunc <= 0:
            raise ValueError("tolerances must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class NewtonRecord:
    iteration: int
    delta: float
    ranks: tuple
    amen: object

    def to_dict(self):
        return {
            "iteration": self.iteration,
            "delta": self.delta,
            "ranks": list(self.ranks),
            "amen": self.amen.to_dict(),
        }


@dataclass
class SolveReport:
    records: list = field(default_factory=list)
    converged: bool = False
    nonlinear_residual: float = float("nan")
    wall_s: float = 0.0

    @property
    def n_iterations(self):
        return len(self.records)

    @property
    def deltas(self):
        return [r.delta for r in self.records]

    @property
    def rank_history(self):
        return [r.ranks for r in self.records]

    def to_dict(self):
        return {
            "records": [r.to_dict() for r in self.records],
            "n_iterations": self.n_iterations,
            "converged": self.converged,
            "deltas": self.deltas,
            "rank_history": [list(r) for r in self.rank_history],
            "nonlinear_residual": self.nonlinear_residual,
            "wall_s": self.wall_s,
        }


def _relative_step(x: TTVector, p: TTVector):
    nx = tt_norm(x)
    d2 = max(nx * nx - 2.0 * tt_dot(x, p) + tt_dot(p, p), 0.0)
    d = np.sqrt(d2)
    return d / nx if nx > 0 else d


def newton_kleinman(sys: ControlSystem, grid: TimeGrid, cfg: NewtonConfig,
                    p0: Optional[TTVector] = None):
    """Solve the discretized Riccati equation; returns (solution, SolveReport).

    Each iteration solves (static - M(p_i)) p = c + g(p_i) by AMEn warm-started
    at p_i and measures the relative step delta_i = ||p_{i+1} - p_i|| / ||p_{i+1}||.
    Without control (B = 0) the equation is already linear and exactly one
    step is taken."""
    t0 = time.perf_counter()
    static = assemble_static_operator(sys, grid)
    c = assemble_rhs_c(sys, grid)
    report = SolveReport()
    p = p0.copy() if p0 is not None else tt_zero(grid.n_t, sys.n)

    if not sys.has_control:
        x, arep = amen_solve(static, c, p, cfg.amen)
        report.records.append(NewtonRecord(1, _relative_step(x, p), x.ranks, arep))
        report.converged = arep.converged
        report.nonlinear_residual = nonlinear_residual(sys, x, grid, cfg.eps_trunc)
        report.wall_s = time.perf_counter() - t0
        return x, report

    for it in range(1, cfg.max_iterations + 1):
        M = assemble_M(sys, p)
        A_op = static.plus(M.scaled(-1.0))
        g = assemble_g(sys, p, cfg.eps_trunc)
        f = tt_round(tt_add(c, g), cfg.eps_trunc)
        x, arep = amen_solve(A_op, f, p, cfg.amen)
        delta = _relative_step(x, p)
        report.records.append(NewtonRecord(it, delta, x.ranks, arep))
        p = x
        if delta <= cfg.eps_newton:
            report.converged = True
            break

    report.nonlinear_residual = nonlinear_residual(sys, p, grid, cfg.eps_trunc)
    report.wall_s = time.perf_counter() - t0
    return p, report


def nonlinear_residual(sys: ControlSystem, p: TTVector, grid: TimeGrid, eps=1e-12):
    """Relative norm of the discretized Riccati residual at p.

    The residual is (c - g(p)) - static * p evaluated in TT arithmetic with
    incremental rounding at eps; it vanishes at the fixed point (the Newton
    right-hand side is c + g because the quadratic term enters the linearized
    operator twice). Normalized by sqrt(n_t) * ||C^T C||_F when C is nonzero,
    absolute otherwise."""
    static = assemble_static_operator(sys, grid)
    c = assemble_rhs_c(sys, grid)
    g = assemble_g(sys, p, eps)
    f = tt_round(tt_add(c, tt_scale(g, -1.0)), eps)
    R = tt_residual_rounded(static, p, f, eps, chunk=1)
    num = tt_norm(R)
    CCt = sys.C @ sys.C.T
    den = np.sqrt(grid.n_t) * np.linalg.norm(CCt)
    return num / den if den > 0 else num
