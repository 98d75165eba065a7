"""Command-line driver: configure, run, and report every experiment.

Subcommands: solve-dre (tensor solve, single-level or nested), verify
(tensor solve against the sequential dense oracle), analyze (rank/storage
tables for a saved solution container), openloop (KKT tracking example).

Configuration precedence is flags > config file (JSON, --config) > environment
(TTDRE_* variables, lower-cased key after the prefix) > built-in defaults.
All output is machine-readable first (CSV/JSON in --out); tables printed to
stdout are derived views. Exit codes: 0 success, 1 numerical failure, 2 usage
error. Failures print a one-line JSON error object to stdout.

Heavy imports happen inside the command handlers so that --threads /
--deterministic can pin BLAS thread counts before numpy is loaded.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import subprocess
import sys

_ENV_PREFIX = "TTDRE_"

_DEFAULTS = {
    "problem": "heat-distributed",
    "levels": [289],
    "n_t": 1000,
    "t_f": 10.0,
    "beta": None,
    "eps_trunc": 1e-12,
    "eps_amen": 1e-9,
    "eps_newton": 1e-5,
    "enrichment_ranks": [4, 4],
    "rank_cap": [None, None],
    "nested": False,
    "out": "results",
    "seed": None,
    "threads": None,
    "deterministic": False,
    "tol": 1e-5,
    "solution": None,
    "zero_control": False,
}

_PROBLEMS = ("heat-distributed", "heat-boundary", "convection-diffusion")


@dataclasses.dataclass
class RunConfig:
    subcommand: str
    problem: str = "heat-distributed"
    levels: list = dataclasses.field(default_factory=lambda: [289])
    n_t: int = 1000
    t_f: float = 10.0
    beta: float | None = None
    eps_trunc: float = 1e-12
    eps_amen: float = 1e-9
    eps_newton: float = 1e-5
    enrichment_ranks: list = dataclasses.field(default_factory=lambda: [4, 4])
    rank_cap: list = dataclasses.field(default_factory=lambda: [None, None])
    nested: bool = False
    out: str = "results"
    seed: int | None = None
    threads: int | None = None
    deterministic: bool = False
    tol: float = 1e-5
    solution: str | None = None
    zero_control: bool = False

    def as_dict(self):
        return dataclasses.asdict(self)


class UsageError(Exception):
    pass


class NumericalError(Exception):
    pass


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="ttdre",
        description="Space-time tensor solver for differential Riccati equations.",
        epilog=f"Any flag may also be set via {_ENV_PREFIX}<NAME> environment "
               "variables or a JSON config file (--config); flags win.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--problem", choices=None, help="problem name")
        p.add_argument("--level", dest="levels", action="append", type=int,
                       help="spatial size n; repeat for a nested hierarchy")
        p.add_argument("--nt", dest="n_t", type=int, help="number of time slices")
        p.add_argument("--tf", dest="t_f", type=float, help="final time")
        p.add_argument("--beta", type=float, help="control penalty")
        p.add_argument("--eps-trunc", dest="eps_trunc", type=float)
        p.add_argument("--eps-amen", dest="eps_amen", type=float)
        p.add_argument("--eps-newton", dest="eps_newton", type=float)
        p.add_argument("--enrichment-rank", dest="enrichment_ranks", action="append",
                       type=int, help="residual enrichment rank per bond (repeatable)")
        p.add_argument("--rank-cap", dest="rank_cap", action="append", type=int,
                       help="hard rank cap per bond (repeatable)")
        p.add_argument("--nested", action="store_true", default=None,
                       help="warm-start each level from the previous one")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="seed recorded in the manifest")
        p.add_argument("--threads", type=int, help="BLAS/OpenMP thread count")
        p.add_argument("--deterministic", action="store_true", default=None,
                       help="single-threaded reproducible mode")

    common(sub.add_parser("solve-dre", help="run the tensor solver"))
    p_verify = sub.add_parser("verify", help="tensor solve vs sequential oracle")
    common(p_verify)
    p_verify.add_argument("--tol", type=float, help="comparison threshold")
    p_verify.add_argument("--zero-control", action="store_true", default=None,
                          help="drop the control term (linear equation)")
    p_analyze = sub.add_parser("analyze", help="rank/storage tables for a container")
    common(p_analyze)
    p_analyze.add_argument("--solution", help="path to a saved .tt container")
    common(sub.add_parser("openloop", help="1-D tracking example via one KKT solve"))
    return parser


def _merge_config(args):
    """flags > file > environment > defaults."""
    merged = dict(_DEFAULTS)
    for key in merged:
        env = os.environ.get(_ENV_PREFIX + key.upper())
        if env is not None:
            merged[key] = json.loads(env) if env[:1] in "[{tfn-0123456789" else env
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}")
        unknown = set(file_cfg) - set(merged)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_cfg)
    for key in merged:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    cfg = RunConfig(subcommand=args.subcommand,
                    **{k: v for k, v in merged.items() if k in RunConfig.__dataclass_fields__ and k != "subcommand"})
    if len(cfg.enrichment_ranks) == 1:
        cfg.enrichment_ranks = cfg.enrichment_ranks * 2
    if len(cfg.rank_cap) == 1:
        cfg.rank_cap = cfg.rank_cap * 2
    return cfg


def _apply_runtime_env(cfg):
    threads = 1 if cfg.deterministic else cfg.threads
    if threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(threads)


def _git_hash():
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True,
                             text=True, timeout=5)
        return out.stdout.strip() or None
    except Exception:
        return None


def _manifest_config(cfg):
    d = cfg.as_dict()
    d["git"] = _git_hash()
    return d


def _newton_config(cfg):
    from .amen import AmenConfig
    from .dre import NewtonConfig
    amen = AmenConfig(eps_amen=cfg.eps_amen,
                      enrichment_ranks=tuple(cfg.enrichment_ranks),
                      rank_cap=tuple(cfg.rank_cap))
    return NewtonConfig(eps_newton=cfg.eps_newton, eps_trunc=cfg.eps_trunc, amen=amen)


def _build_instances(cfg):
    from .dre import TimeGrid
    from .problems import build_problem
    if cfg.problem not in _PROBLEMS:
        raise UsageError(f"unknown problem {cfg.problem!r}; choose from {_PROBLEMS}")
    grid = TimeGrid(t_f=cfg.t_f, n_t=cfg.n_t)
    levels = sorted(set(cfg.levels))
    try:
        return [build_problem(cfg.problem, n, grid, beta=cfg.beta) for n in levels]
    except ValueError as exc:
        raise UsageError(str(exc))


def cmd_solve_dre(cfg):
    from .analysis import export_results, storage_report, unfolding_singular_values
    from .multilevel import hierarchy_from_problems, nested_solve
    from .dre import newton_kleinman
    from .tt import tt_save

    instances = _build_instances(cfg)
    ncfg = _newton_config(cfg)
    if cfg.nested and len(instances) > 1:
        hier = hierarchy_from_problems(instances)
        p, reports = nested_solve(hier, ncfg)
    else:
        inst = instances[-1]
        p, report = newton_kleinman(inst.sys, inst.grid, ncfg)
        reports = [report]

    os.makedirs(cfg.out, exist_ok=True)
    tt_save(p, os.path.join(cfg.out, "solution.tt"))
    spectra = [unfolding_singular_values(p, "P1"), unfolding_singular_values(p, "P2")]
    export_results(reports, spectra, cfg.out, config=_manifest_config(cfg))

    for level, rep in enumerate(reports):
        tail = rep.deltas[-1] if rep.records else float("nan")
        print(f"level {level}: iterations={rep.n_iterations} converged={rep.converged} "
              f"final_delta={tail:.3e} residual={rep.nonlinear_residual:.3e} "
              f"wall={rep.wall_s:.1f}s")
    rep = storage_report(p)
    print(f"solution ranks={p.ranks} tt_kB={rep.tt_kb:.1f} "
          f"dense_kB={rep.dense_kb:.1f} compression={rep.ratio:.1f}x")
    if not all(r.converged for r in reports):
        raise NumericalError("Newton iteration did not converge; artifacts written")
    return 0


def cmd_verify(cfg):
    import numpy as np

    from .dre import newton_kleinman
    from .oracle import compare_trajectory, sequential_dre

    instances = _build_instances(cfg)
    inst = instances[-1]
    sys_ = inst.sys
    if cfg.zero_control:
        from .dre import ControlSystem
        sys_ = ControlSystem(E=sys_.E, A=sys_.A,
                             B=np.zeros((sys_.n, sys_.n_inputs)), C=sys_.C)
    ncfg = _newton_config(cfg)
    p, report = newton_kleinman(sys_, inst.grid, ncfg)
    ref = sequential_dre(sys_, inst.grid)
    max_rel, aggregate = compare_trajectory(p, ref)

    print(f"newton iterations: {report.n_iterations} (converged={report.converged})")
    print(f"{'metric':<28}{'value':>14}")
    print(f"{'max slice rel error':<28}{max_rel:>14.3e}")
    print(f"{'aggregate rel error':<28}{aggregate:>14.3e}")
    print(f"{'threshold':<28}{cfg.tol:>14.3e}")
    if not report.converged:
        raise NumericalError("tensor solve did not converge")
    if not (aggregate <= cfg.tol):
        raise NumericalError(
            f"oracle comparison failed: aggregate {aggregate:.3e} > {cfg.tol:.1e}")
    print("verify: PASS")
    return 0


def cmd_analyze(cfg):
    import csv

    from .analysis import THRESHOLDS, _config_hash, truncation_table, unfolding_singular_values
    from .tt import tt_load

    if not cfg.solution:
        raise UsageError("analyze requires --solution <container.tt>")
    try:
        p = tt_load(cfg.solution)
    except (OSError, ValueError) as exc:
        raise NumericalError(f"cannot load solution container: {exc}")

    rows = truncation_table(p)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "thresholds.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v
                             for k, v in row.items()})
    spec_path = os.path.join(cfg.out, "spectra.csv")
    with open(spec_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unfolding", "index", "sigma"])
        for which in ("P1", "P2"):
            sp = unfolding_singular_values(p, which)
            for k, s in enumerate(sp.sigma):
                writer.writerow([which, k, repr(float(s))])
    with open(os.path.join(cfg.out, "manifest.json"), "w") as fh:
        d = _manifest_config(cfg)
        json.dump({"schema_version": 1, "config": d,
                   "config_hash": _config_hash(d)}, fh, indent=2, sort_keys=True)
        fh.write("\n")

    print(f"{'threshold':>12} {'r1':>5} {'r2':>5} {'rank_P2':>8} {'tt_kB':>10} {'ratio':>10}")
    for row in rows:
        print(f"{row['threshold']:>12.1e} {row['r1']:>5d} {row['r2']:>5d} "
              f"{row['rank_P2']:>8d} {row['tt_kb']:>10.1f} {row['ratio']:>10.1f}")
    assert len(rows) == len(THRESHOLDS)
    return 0


def cmd_openloop(cfg):
    import csv

    import numpy as np

    from .openloop import assemble_kkt, block_residuals, solution_spectra, solve_kkt
    from .problems import build_motivation_1d

    n = cfg.levels[-1] if cfg.levels else 100
    prob = build_motivation_1d(n=n, n_t=cfg.n_t)
    kkt = assemble_kkt(prob, beta=cfg.beta)
    sol = solve_kkt(kkt)
    residuals = block_residuals(kkt, sol)
    spectra = solution_spectra(sol)

    os.makedirs(cfg.out, exist_ok=True)
    for name, mat in (("state", sol.X), ("control", sol.U), ("adjoint", sol.P)):
        with open(os.path.join(cfg.out, f"{name}.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"c{i}" for i in range(mat.shape[0])])
            for j in range(mat.shape[1]):
                writer.writerow([repr((j + 1) * kkt.tau)] + [repr(v) for v in mat[:, j]])
    with open(os.path.join(cfg.out, "spectra.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["matrix", "index", "sigma"])
        for name, sig in spectra.items():
            for k, s in enumerate(sig):
                writer.writerow([name, k, repr(float(s))])

    energy = kkt.tau * float(np.sum(sol.U * sol.U))
    print(f"kkt dim {kkt.matrix.shape[0]}, residual {sol.residual:.3e}")
    for name, val in residuals.items():
        print(f"{name + ' residual':<20}{val:>12.3e}")
    print(f"{'control energy':<20}{energy:>12.3e}")
    for name, sig in spectra.items():
        r = int(np.count_nonzero(sig > 1e-8 * sig[0])) if sig[0] > 0 else 0
        print(f"{name} numerical rank (1e-8): {r}")
    return 0


_COMMANDS = {
    "solve-dre": cmd_solve_dre,
    "verify": cmd_verify,
    "analyze": cmd_analyze,
    "openloop": cmd_openloop,
}


def _emit_error(kind, exc):
    print(json.dumps({"error": {"type": kind, "message": str(exc)}}))


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _merge_config(args)
    except UsageError as exc:
        _emit_error("usage", exc)
        return 2
    _apply_runtime_env(cfg)
    try:
        return _COMMANDS[cfg.subcommand](cfg)
    except UsageError as exc:
        _emit_error("usage", exc)
        return 2
    except NumericalError as exc:
        _emit_error("numerical", exc)
        return 1
    except Exception as exc:  # any solver failure still yields JSON + exit 1
        kind = "numerical" if isinstance(exc, (RuntimeError, ArithmeticError, ValueError)) else "internal"
        _emit_error(kind, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
