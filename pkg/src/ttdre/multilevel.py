"""Nested iteration over a hierarchy of spatial grids.

The Riccati solution computed on a coarse mesh is prolonged core-wise to the
next finer mesh by bilinear interpolation (time core untouched) and used to
warm-start the Newton iteration there. Only space is coarsened; the time grid
is shared by all levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import scipy.sparse as sps

from .dre import NewtonConfig, TimeGrid, newton_kleinman
from .tt import TTVector, apply_spatial_mid, apply_spatial_rows, tt_round, tt_zero


def _side_of(n):
    s = int(round(math.sqrt(n)))
    if s * s != n:
        raise ValueError(f"{n} is not a square grid size")
    return s


def _prolongation_1d(side_c, side_f):
    """Linear interpolation from side_c to side_f = 2*side_c - 1 nodes."""
    if side_f != 2 * side_c - 1:
        raise ValueError(f"grids not nested: {side_c} -> {side_f} nodes per side")
    P = sps.lil_matrix((side_f, side_c))
    for i in range(side_c):
        P[2 * i, i] = 1.0
    for i in range(side_c - 1):
        P[2 * i + 1, i] = 0.5
        P[2 * i + 1, i + 1] = 0.5
    return sps.csr_matrix(P)


def build_prolongation(n_coarse, n_fine):
    """Bilinear tensor-product interpolation matrix (n_fine x n_coarse).

    Coarse nodes inject with unit rows; every row sums to 1. Grids must be
    nested ((2^k+1) nodes per side, halved spacing per level)."""
    if n_coarse == n_fine:
        return sps.eye(n_fine, format="csr")
    side_c = _side_of(n_coarse)
    side_f = _side_of(n_fine)
    steps = math.log2((side_f - 1) / (side_c - 1)) if side_c > 1 else None
    if steps is None or abs(steps - round(steps)) > 1e-12 or steps < 1:
        raise ValueError(f"grids not nested: {n_coarse} -> {n_fine}")
    P1 = sps.eye(side_c, format="csr")
    side = side_c
    for _ in range(int(round(steps))):
        P1 = _prolongation_1d(side, 2 * side - 1) @ P1
        side = 2 * side - 1
    return sps.kron(P1, P1, format="csr")


def prolong_tt(p: TTVector, Pi_h, eps_trunc=None):
    """Apply I (x) Pi_h (x) Pi_h core-wise: cores 2 and 3 are interpolated,
    the time core is untouched; ranks are unchanged, then optionally rounded
    at eps_trunc."""
    Pi_h = sps.csr_matrix(Pi_h)
    if Pi_h.shape[1] != p.n:
        raise ValueError(f"prolongation expects {Pi_h.shape[1]} spatial nodes, tensor has {p.n}")
    out = TTVector(
        p.core1.copy(),
        apply_spatial_mid(Pi_h, p.core2),
        apply_spatial_rows(Pi_h, p.core3),
    )
    if eps_trunc is not None:
        out = tt_round(out, eps_trunc)
    return out


@dataclass
class LevelHierarchy:
    """Coarse-to-fine problem levels sharing one time grid."""

    systems: list
    grid: TimeGrid
    prolongations: list = field(default_factory=list)

    def __post_init__(self):
        dims = self.dims
        if not dims:
            raise ValueError("hierarchy must contain at least one level")
        if any(b <= a for a, b in zip(dims, dims[1:])):
            raise ValueError("level dims must be strictly increasing")
        if not self.prolongations:
            self.prolongations = [
                build_prolongation(a, b) for a, b in zip(dims, dims[1:])
            ]
        if len(self.prolongations) != len(dims) - 1:
            raise ValueError("need one prolongation per level pair")
        for Pi, (a, b) in zip(self.prolongations, zip(dims, dims[1:])):
            if Pi.shape != (b, a):
                raise ValueError(f"prolongation shape {Pi.shape} does not map {a} -> {b}")

    @property
    def dims(self):
        return [s.n for s in self.systems]

    @property
    def n_levels(self):
        return len(self.systems)


def hierarchy_from_problems(instances):
    """LevelHierarchy from ProblemInstances ordered coarse to fine."""
    if not instances:
        raise ValueError("no levels given")
    return LevelHierarchy([inst.sys for inst in instances], instances[0].grid)


def nested_solve(hier: LevelHierarchy, cfg: NewtonConfig):
    """Solve coarsest-to-finest; returns (finest solution, per-level reports).

    The coarsest level cold-starts at zero; every finer level warm-starts at
    the prolonged previous solution rounded at eps_trunc. A single-level
    hierarchy reproduces newton_kleinman exactly."""
    reports = []
    p = None
    for k, sys in enumerate(hier.systems):
        if k == 0:
            p0 = tt_zero(hier.grid.n_t, sys.n)
        else:
            p0 = prolong_tt(p, hier.prolongations[k - 1], cfg.eps_trunc)
        try:
            p, report = newton_kleinman(sys, hier.grid, cfg, p0=p0)
        except Exception as exc:
            raise RuntimeError(f"nested solve failed at level {k} (n = {sys.n})") from exc
        reports.append(report)
    return p, reports
