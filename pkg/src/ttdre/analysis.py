"""Rank and storage analysis of space-time solutions, plus result export.

The two matrix unfoldings of a solution tensor are
P1 (n^2 x n_t, time slices as columns) and P2 (n n_t x n, slices stacked
vertically). Their singular values are computed from the TT cores alone:
orthogonalizing toward a core makes the complementary frame orthonormal, so
the spectrum of the unfolding equals that of a rank-sized core reshape.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np
import scipy

from .tt import TTVector, orthogonalize, tt_round

THRESHOLDS = (float(np.finfo(float).eps), 1e-14, 1e-12, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2)


@dataclass
class UnfoldingSpectrum:
    which: str                      # "P1" | "P2"
    sigma: np.ndarray               # nonincreasing
    ranks: dict = field(default_factory=dict)  # threshold -> numerical rank

    def rank_at(self, eps):
        """Count sigma_k > eps * sigma_1."""
        if self.sigma.size == 0 or self.sigma[0] == 0.0:
            return 0
        return int(np.count_nonzero(self.sigma > eps * self.sigma[0]))


@dataclass
class StorageReport:
    tt_bytes: int
    dense_bytes: int

    @property
    def ratio(self):
        return self.dense_bytes / self.tt_bytes if self.tt_bytes else float("inf")

    @property
    def tt_kb(self):
        return self.tt_bytes / 1024.0

    @property
    def dense_kb(self):
        return self.dense_bytes / 1024.0


def unfolding_singular_values(p: TTVector, which):
    """Exact singular values of the requested unfolding from the TT cores.

    P1 = (orthonormal frame) @ core1^T, so sigma(P1) = sigma(core1) after
    orthogonalizing toward core 1; P2 = (core1 (x) core3^T) @ reshape(core2)
    with an orthonormal left factor after orthogonalizing toward core 2, so
    sigma(P2) comes from the (r1 r2, n) reshape of core2."""
    if which == "P1":
        q = orthogonalize(p, 1)
        sigma = np.linalg.svd(q.core1, compute_uv=False)
    elif which == "P2":
        q = orthogonalize(p, 2)
        r1, n, r2 = q.core2.shape
        R = q.core2.transpose(0, 2, 1).reshape(r1 * r2, n)
        sigma = np.linalg.svd(R, compute_uv=False)
    else:
        raise ValueError("which must be 'P1' or 'P2'")
    spectrum = UnfoldingSpectrum(which, sigma)
    spectrum.ranks = {eps: spectrum.rank_at(eps) for eps in THRESHOLDS}
    return spectrum


def storage_report(p: TTVector):
    """Byte accounting: 8 (n_t r1 + r1 n r2 + r2 n) TT floats vs 8 n_t n^2 dense."""
    n_t, n = p.n_t, p.n
    r1, r2 = p.ranks
    tt_floats = n_t * r1 + r1 * n * r2 + r2 * n
    return StorageReport(tt_bytes=8 * tt_floats, dense_bytes=8 * n_t * n * n)


def truncation_table(p: TTVector):
    """One row per threshold: ranks and compression after rounding p there.

    The P2 column is the unfolding's numerical rank at the same threshold,
    taken from the exact spectrum (not from the rounded tensor)."""
    spectrum2 = unfolding_singular_values(p, "P2")
    spectrum1 = unfolding_singular_values(p, "P1")
    rows = []
    for eps in THRESHOLDS:
        q = tt_round(p, eps)
        rep = storage_report(q)
        rows.append({
            "threshold": eps,
            "r1": q.ranks[0],
            "r2": q.ranks[1],
            "rank_P1": spectrum1.ranks[eps],
            "rank_P2": spectrum2.ranks[eps],
            "tt_kb": rep.tt_kb,
            "ratio": rep.ratio,
        })
    return rows


# ---------------------------------------------------------------------------
# export

def _config_hash(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def export_results(reports, spectra, path, config=None):
    """Write convergence/rank/spectrum CSVs plus a JSON manifest.

    reports: SolveReport or list of them (one per level); spectra: iterable of
    UnfoldingSpectrum. Returns the list of files written. Floats are written
    with repr so a parse-back reproduces them exactly."""
    os.makedirs(path, exist_ok=True)
    if reports is None:
        reports = []
    if not isinstance(reports, (list, tuple)):
        reports = [reports]
    spectra = list(spectra) if spectra is not None else []

    written = []
    conv_rows = []
    rank_rows = []
    for level, rep in enumerate(reports):
        for rec in rep.records:
            conv_rows.append([level, rec.iteration, repr(rec.delta),
                              rec.amen.n_sweeps, rec.amen.total_gmres_iters])
            rank_rows.append([level, rec.iteration, rec.ranks[0], rec.ranks[1]])
    f = os.path.join(path, "convergence.csv")
    _write_csv(f, ["level", "iteration", "delta", "amen_sweeps", "gmres_iters"], conv_rows)
    written.append(f)
    f = os.path.join(path, "ranks.csv")
    _write_csv(f, ["level", "iteration", "r1", "r2"], rank_rows)
    written.append(f)

    spec_rows = []
    for sp in spectra:
        for k, s in enumerate(sp.sigma):
            spec_rows.append([sp.which, k, repr(float(s))])
    f = os.path.join(path, "spectra.csv")
    _write_csv(f, ["unfolding", "index", "sigma"], spec_rows)
    written.append(f)

    from . import __version__
    manifest = {
        "schema_version": 1,
        "config": config,
        "config_hash": _config_hash(config if config is not None else {}),
        "versions": {
            "package": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "timings": {"level_wall_s": [rep.wall_s for rep in reports]},
        "converged": [rep.converged for rep in reports],
        "nonlinear_residuals": [rep.nonlinear_residual for rep in reports],
        "created_unix": time.time(),
    }
    f = os.path.join(path, "manifest.json")
    with open(f, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    written.append(f)
    return written
