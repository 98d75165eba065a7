"""Model problems on the unit square and the 1D open-loop example.

All 2D problems are finite-difference discretizations on tensor-product grids
with (2^k+1)^2 nodes (Dirichlet problems count interior nodes), E = I, node
index l = i2 * side + i1 with the xi_1 coordinate fastest. Control and
observation operators average or inject over disk-shaped patches; B columns
carry the 1/sqrt(beta) scaling of the control penalty so the Riccati solver
never sees beta explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from .dre import ControlSystem, TimeGrid
from .tt import TTVector, extract_timeslice

# patch geometry on (0,1)^2
_DISTRIBUTED_CONTROL = [
    ((0.5, 0.5), 0.01),
    ((0.1, 0.2), 0.0025),
    ((0.78, 0.23), 0.0025),
    ((0.2, 0.7), 0.0025),
    ((0.9, 0.87), 0.0025),
]
_OBSERVATION = [((a / 6.0, b / 6.0), 0.01)
                for b in (1, 3, 5) for a in (1, 3, 5)]


@dataclass(frozen=True)
class Patch:
    """Disk indicator {xi : ||xi - center||^2 <= radius2} on (0,1)^2."""

    center: tuple
    radius2: float

    def mask(self, x1, x2):
        return (x1 - self.center[0]) ** 2 + (x2 - self.center[1]) ** 2 <= self.radius2


@dataclass
class ProblemInstance:
    name: str
    sys: ControlSystem
    grid: TimeGrid
    n: int
    beta: float
    x0: np.ndarray
    x_d: np.ndarray
    control_patches: list = field(default_factory=list)
    observation_patches: list = field(default_factory=list)


def _side_of(n):
    s = int(round(math.sqrt(n)))
    if s * s != n or s < 2:
        raise ValueError(f"{n} is not a square grid size")
    return s


def _coords(side, h, offset=0.0):
    """Node coordinates for index l = i2*side + i1 (xi_1 fastest)."""
    xi = offset + h * np.arange(side)
    x1 = np.tile(xi, side)
    x2 = np.repeat(xi, side)
    return x1, x2


def _laplacian_1d_neumann(side, h):
    """Second-difference matrix with mirrored ghost nodes at both ends."""
    main = np.full(side, -2.0)
    off = np.ones(side - 1)
    T = sps.diags([off, main, off], [-1, 0, 1], format="lil")
    T[0, 1] = 2.0
    T[side - 1, side - 2] = 2.0
    return sps.csr_matrix(T / h ** 2)


def _laplacian_1d_dirichlet(side, h):
    main = np.full(side, -2.0)
    off = np.ones(side - 1)
    return sps.csr_matrix(sps.diags([off, main, off], [-1, 0, 1]) / h ** 2)


def _patch_operator(patches, x1, x2, kind):
    """Rows (observation averages) or columns (control injections) of disk
    indicators, each normalized by its node count.

    On grids too coarse for a disk to capture any node (toy levels), the
    patch degenerates to its nearest grid node so every column/row stays
    nonzero and normalization is preserved."""
    n = x1.size
    cols = []
    for patch in patches:
        mask = patch.mask(x1, x2)
        count = int(mask.sum())
        if count == 0:
            c1, c2 = patch.center
            nearest = int(np.argmin((x1 - c1) ** 2 + (x2 - c2) ** 2))
            mask = np.zeros(n, dtype=bool)
            mask[nearest] = True
            count = 1
        col = np.zeros(n)
        col[mask] = 1.0 / count
        cols.append(col)
    M = np.stack(cols, axis=0)
    return M if kind == "rows" else M.T


def build_heat_distributed(n, grid: TimeGrid, beta=1e-4):
    """Neumann heat equation with five interior control patches and nine
    observation averages."""
    side = _side_of(n)
    h = 1.0 / (side - 1)
    T1 = _laplacian_1d_neumann(side, h)
    I1 = sps.eye(side, format="csr")
    A = sps.kron(I1, T1, format="csr") + sps.kron(T1, I1, format="csr")
    x1, x2 = _coords(side, h)
    control = [Patch(c, r2) for c, r2 in _DISTRIBUTED_CONTROL]
    observation = [Patch(c, r2) for c, r2 in _OBSERVATION]
    B = _patch_operator(control, x1, x2, "cols") / math.sqrt(beta)
    C = _patch_operator(observation, x1, x2, "rows")
    sys = ControlSystem(sps.eye(n, format="csr"), A, B, C)
    return ProblemInstance("heat-distributed", sys, grid, n, beta,
                           np.zeros(n), np.ones(n), control, observation)


def build_heat_boundary(n, grid: TimeGrid, beta=1.0):
    """Neumann heat equation controlled through the boundary flux, one input
    per edge; ghost-node elimination puts weight 2/h on each edge node."""
    side = _side_of(n)
    h = 1.0 / (side - 1)
    T1 = _laplacian_1d_neumann(side, h)
    I1 = sps.eye(side, format="csr")
    A = sps.kron(I1, T1, format="csr") + sps.kron(T1, I1, format="csr")
    x1, x2 = _coords(side, h)
    i1 = np.arange(n) % side
    i2 = np.arange(n) // side
    edges = [i1 == 0, i1 == side - 1, i2 == 0, i2 == side - 1]
    B = np.zeros((n, 4))
    for col, mask in enumerate(edges):
        B[mask, col] = 2.0 / h
    B /= math.sqrt(beta)
    observation = [Patch(c, r2) for c, r2 in _OBSERVATION]
    C = _patch_operator(observation, x1, x2, "rows")
    sys = ControlSystem(sps.eye(n, format="csr"), A, B, C)
    return ProblemInstance("heat-boundary", sys, grid, n, beta,
                           np.zeros(n), np.ones(n), [], observation)


def build_convection_diffusion(n, grid: TimeGrid, beta=1e-4):
    """Dirichlet convection-diffusion-reaction operator
    Delta x + 20 x_{xi1} - 10 x_{xi2} + 200 x with central differences and no
    upwinding; n counts interior nodes, h = 1/(side+1)."""
    side = _side_of(n)
    h = 1.0 / (side + 1)
    T1 = _laplacian_1d_dirichlet(side, h)
    off = np.ones(side - 1)
    conv1 = sps.diags([-off, off], [-1, 1]) * (10.0 / h)   # 20 * d/dxi1
    conv2 = sps.diags([off, -off], [-1, 1]) * (5.0 / h)    # -10 * d/dxi2
    I1 = sps.eye(side, format="csr")
    A = (sps.kron(I1, T1 + conv1, format="csr")
         + sps.kron(T1 + conv2, I1, format="csr")
         + 200.0 * sps.eye(n, format="csr"))
    x1, x2 = _coords(side, h, offset=h)
    control = [Patch(c, r2) for c, r2 in _DISTRIBUTED_CONTROL]
    observation = [Patch(c, r2) for c, r2 in _OBSERVATION]
    B = _patch_operator(control, x1, x2, "cols") / math.sqrt(beta)
    C = _patch_operator(observation, x1, x2, "rows")
    sys = ControlSystem(sps.eye(n, format="csr"), A, B, C)
    return ProblemInstance("convection-diffusion", sys, grid, n, beta,
                           np.zeros(n), np.ones(n), control, observation)


_BUILDERS = {
    "heat-distributed": build_heat_distributed,
    "heat-boundary": build_heat_boundary,
    "convection-diffusion": build_convection_diffusion,
}


def build_problem(name, n, grid: TimeGrid, beta=None):
    """Problem factory; beta = None picks the problem's default weight."""
    if name not in _BUILDERS:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(_BUILDERS)}")
    if beta is None:
        return _BUILDERS[name](n, grid)
    return _BUILDERS[name](n, grid, beta)


# ---------------------------------------------------------------------------
# closed-loop simulation

def simulate_closed_loop(inst: ProblemInstance, p: TTVector):
    """Integrate the state under the feedback u = -B^T P E (x - x_d) - B^T r.

    The feedforward term r solves the adjoint equation
    E^T r' + (A - B B^T P E)^T r + E^T P A x_d = 0, r(t_f) = 0 (x_d constant
    in time), marched backward by implicit Euler on the solver's own grid;
    the state then runs forward by implicit Euler with gains taken from the
    nearest time slice. Dense desk-scale computation."""
    sys, grid = inst.sys, inst.grid
    n, n_t, tau = sys.n, grid.n_t, grid.tau
    E = sys.E.toarray()
    A = sys.A.toarray()
    B = sys.B
    x_d = inst.x_d
    Ax_d = A @ x_d

    P_slices = [extract_timeslice(p, j).dense() for j in range(1, n_t + 1)]

    # adjoint/feedforward, backward from r(t_f) = 0
    r = np.zeros((n_t + 1, n))
    for j in range(n_t, 0, -1):
        Pj = P_slices[j - 1]
        F = A - B @ (B.T @ Pj @ E)
        K = E.T / tau - F.T
        rhs = E.T @ r[j] / tau + E.T @ (Pj @ Ax_d)
        r[j - 1] = np.linalg.solve(K, rhs)

    # state, forward from x0
    X = np.zeros((n_t + 1, n))
    U = np.zeros((n_t, B.shape[1]))
    X[0] = inst.x0
    for j in range(1, n_t + 1):
        Pj = P_slices[min(j, n_t - 1)]
        G = B.T @ Pj @ E
        K = E - tau * A + tau * B @ G
        rhs = E @ X[j - 1] + tau * B @ (G @ x_d - B.T @ r[j])
        X[j] = np.linalg.solve(K, rhs)
        U[j - 1] = -G @ (X[j] - x_d) - B.T @ r[j]
    return X, U


# ---------------------------------------------------------------------------
# 1D open-loop example

@dataclass
class Motivation1D:
    """1D Neumann heat tracking problem on (0,1) x (0,2) for the open-loop
    optimality system: full-state observation, control injected on
    omega = (0.1,0.4) u (0.6,0.9)."""

    sys: ControlSystem
    grid: TimeGrid
    x0: np.ndarray
    x_d: np.ndarray  # (n, n_t), column j-1 samples x_d at t = j*tau

    @property
    def n(self):
        return self.sys.n

    @property
    def n_inputs(self):
        return self.sys.n_inputs


def build_motivation_1d(n, n_t):
    """1D heat equation with Gaussian initial state near 0.25 and a desired
    trajectory blending that Gaussian into one near 0.75 over t in [0, 2]."""
    h = 1.0 / (n - 1)
    xi = h * np.arange(n)
    A = _laplacian_1d_neumann(n, h)
    omega = ((xi > 0.1) & (xi < 0.4)) | ((xi > 0.6) & (xi < 0.9))
    cols = np.flatnonzero(omega)
    B = np.zeros((n, cols.size))
    B[cols, np.arange(cols.size)] = 1.0
    C = np.eye(n)
    x0 = np.exp(-((xi - 0.25) ** 2) / 0.05) / math.sqrt(0.05 * math.pi)
    bump = np.exp(-((xi - 0.75) ** 2) / 0.02) / math.sqrt(0.02 * math.pi)
    grid = TimeGrid(2.0, n_t)
    t = grid.tau * np.arange(1, n_t + 1)
    x_d = np.outer(x0, t - 2.0) + np.outer(bump, t)
    sys = ControlSystem(sps.eye(n, format="csr"), A, B, C)
    return Motivation1D(sys, grid, x0, x_d)
