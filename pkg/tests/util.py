"""Random TT/operator builders and small reference systems shared by tests.

Everything here is an input generator; reference values are always computed
inside the test modules by an independent route (explicit Kronecker products,
slice-wise matrix algebra, or hand formulas).
"""

import numpy as np
import scipy.sparse as sps

from ttdre.dre import ControlSystem, TimeGrid
from ttdre.tt import KronTerm, LowRank, TTOperator, TTVector


def random_tt(rng, n_t, n, r1, r2):
    return TTVector(
        rng.standard_normal((n_t, r1)),
        rng.standard_normal((r1, n, r2)),
        rng.standard_normal((r2, n)),
    )


def random_sparse(rng, n, density=0.4):
    M = rng.standard_normal((n, n))
    M[rng.random((n, n)) > density] = 0.0
    M[np.arange(n), np.arange(n)] = rng.standard_normal(n) + 2.0
    return sps.csr_matrix(M)


def _random_time_factor(rng, n_t, kind):
    if kind == "none":
        return None
    if kind == "diag":
        return rng.standard_normal(n_t) + 2.0
    if kind == "bidiag":
        return sps.diags(
            [rng.standard_normal(n_t) + 2.0, rng.standard_normal(max(n_t - 1, 0))],
            [0, 1], format="csr",
        )
    return rng.standard_normal((n_t, n_t)) + 2.0 * np.eye(n_t)


def _random_spatial_factor(rng, n, kind):
    if kind == "none":
        return None
    if kind == "dense":
        return rng.standard_normal((n, n)) + 2.0 * np.eye(n)
    if kind == "lowrank":
        w = int(rng.integers(1, 3))
        return LowRank(rng.standard_normal((n, w)), rng.standard_normal((n, w)))
    return random_sparse(rng, n)


def random_operator(rng, n_t, n, n_terms=3):
    """Random Kronecker-sum operator mixing all supported factor kinds, with a
    dominant identity term so it stays comfortably nonsingular."""
    tkinds = ["none", "diag", "bidiag", "dense"]
    skinds = ["none", "dense", "lowrank", "sparse"]
    terms = [KronTerm(3.0 * n_terms, None, None, None)]
    for _ in range(n_terms):
        terms.append(KronTerm(
            float(rng.uniform(0.5, 1.5)),
            _random_time_factor(rng, n_t, tkinds[int(rng.integers(len(tkinds)))]),
            _random_spatial_factor(rng, n, skinds[int(rng.integers(len(skinds)))]),
            _random_spatial_factor(rng, n, skinds[int(rng.integers(len(skinds)))]),
        ))
    return TTOperator(n_t, n, terms)


def stable_system(rng, n, m=1, p=1, lumped_mass=False):
    """Random stable descriptor system: A has spectrum in the open left
    half-plane, E is the identity or a positive diagonal lumped mass."""
    G = rng.standard_normal((n, n)) / np.sqrt(n)
    A = -(G @ G.T) - 0.5 * np.eye(n) + 0.3 * (G - G.T)
    E = np.diag(rng.uniform(0.5, 2.0, size=n)) if lumped_mass else np.eye(n)
    B = rng.standard_normal((n, m))
    C = rng.standard_normal((p, n))
    return ControlSystem(sps.csr_matrix(E), sps.csr_matrix(A), B, C)


def grid(n_t, t_f=1.0):
    return TimeGrid(t_f=t_f, n_t=n_t)
