"""Command-line entry point: ``orbifold-ma <command> [config.toml] --out DIR --seed S --tol T``.

Each command writes ``<command>_report.json``, ``<command>_timings.json`` and CSV / binary side
files into the output directory and exits 0 iff every assertion in the report passed.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .alpha import random_band_limited
from .calculus import green_kernel, laplacian_array
from .config import ConfigError, RunConfig, load_config
from .envelope import EnvelopeProblem, convergence_report
from .estimates import (LevelVolume, cell_weights, default_s_grid, degiorgi_verify, entropy,
                        level_volume)
from .io import hermitian_to_bytes
from .orbifold import GridError, GridField, group_average
from .pipelines import (RunRecord, _certified_residual, _mass, _theta, alpha_setup, emit_report,
                        make_setup, run_linfty_check, run_mean_value_check, NORMALIZATION_TOL)
from .solver import SolverError, solve_calibrated_family

log = logging.getLogger("orbifold_ma")
GREEN_TOL = 1e-8
RATE_RATIO_MAX = 3.0
# spectral i ddbar rounds at about eps * N^2 relative to the coefficients
INVARIANCE_TOL = 1e-10


def cmd_grid(cfg: RunConfig) -> RunRecord:
    rec = RunRecord("grid", cfg.to_dict())
    setup = make_setup(cfg)
    grid = setup.grid
    group = grid.group
    try:
        group.check_axioms()
        axioms = True
    except GridError:
        axioms = False
    rec.stages["grid"] = {"n": grid.n, "resolution": grid.resolution, "group": group.name,
                          "order": group.order, "spacing": grid.spacing,
                          "multiplication_table": group.multiplication_table().tolist()}
    defects = {"F_spec": setup.F_spec.invariance_defect(),
               "chi": setup.chi.equivariance_defect(),
               "omega": setup.omega.equivariance_defect()}
    rec.stages["invariance_defects"] = defects
    rec.check("group_axioms", axioms)
    for name, d in defects.items():
        rec.check(f"invariant.{name}", d <= INVARIANCE_TOL)
    rec.fields["F_spec"] = setup.F_spec
    rec.blobs["chi.bin"] = hermitian_to_bytes(setup.chi)
    rec.blobs["omega.bin"] = hermitian_to_bytes(setup.omega)
    return rec


def cmd_ma_solve(cfg: RunConfig) -> RunRecord:
    rec = RunRecord("ma_solve", cfg.to_dict())
    setup = make_setup(cfg)
    with rec.timed("family"):
        try:
            sols = solve_calibrated_family(setup.chi, setup.omega, setup.F_spec, cfg.t_list,
                                           tol=cfg.tol, max_iter=cfg.max_iter)
        except (SolverError, ValueError) as exc:
            rec.errors["family"] = str(exc)
            return rec
    rows = []
    for sol in sols:
        key = f"t={sol.t:g}"
        mass = _mass(setup, sol.F_t)
        res = _certified_residual(sol)
        rec.stages[key] = {"V_t": sol.V_t, "iterations": sol.iterations, "residual": res,
                           "certified_by": sol.certified_by, "scale": sol.scale,
                           "positivity_margin": sol.positivity_margin,
                           "normalization_defect": abs(mass - 1.0),
                           "entropy": entropy(sol.F_t, cfg.p, setup.omega)}
        rec.check(f"{key}.residual", res <= cfg.tol)
        rec.check(f"{key}.positive", sol.positivity_margin > 0)
        rec.check(f"{key}.normalization", abs(mass - 1.0) <= NORMALIZATION_TOL)
        rec.check(f"{key}.sup_zero", sol.u.values.max() == 0.0)
        rec.fields[f"phi_t_{sol.t:g}"] = sol.u
        for i, h in enumerate(sol.history):
            rows.append([sol.t, i, h["mode"], h["step"], h["merit_before"], h["merit_after"],
                         h["log_residual"], h["margin"]])
    rec.curves["history"] = (["t", "iteration", "mode", "step", "merit_before", "merit_after",
                              "log_residual", "margin"], rows)
    return rec


def cmd_envelope(cfg: RunConfig) -> RunRecord:
    rec = RunRecord("envelope", cfg.to_dict())
    setup = make_setup(cfg)
    if setup.grid.n != 1:
        rec.errors["envelope"] = "the envelope oracle needs n = 1"
        return rec
    rows = []
    for t in cfg.t_list:
        key = f"t={t:g}"
        theta = _theta(setup, t)
        try:
            with rec.timed("envelope"):
                rep = convergence_report(EnvelopeProblem(theta, setup.omega, setup.grid.field(1.0)),
                                         cfg.beta_list, tol=cfg.tol)
        except (SolverError, ValueError, RuntimeError) as exc:
            rec.errors[key] = str(exc)
            continue
        mixed = bool(theta.min_eig().min() < 0)
        rec.stages[key] = {"mixed_sign": mixed, "sup_errors": rep.sup_errors,
                           "rate_ratios": rep.rate_ratios, "ratio_max_min": rep.ratio_max_min,
                           "fitted_C": rep.fitted_C, "certified_by": rep.certified_by,
                           "oracle_residual": rep.oracle_residual,
                           "oracle_min": float(rep.oracle_envelope.values.min())}
        rec.check(f"{key}.max_principle", rep.max_principle_ok)
        rec.check(f"{key}.improves", rep.sup_errors[-1] < rep.sup_errors[0])
        rec.check(f"{key}.rate_ratio", rep.ratio_max_min <= RATE_RATIO_MAX)
        rec.fields[f"oracle_t_{t:g}"] = rep.oracle_envelope
        for b, e, r, su, bd in zip(rep.beta_list, rep.sup_errors, rep.rate_ratios, rep.sup_u,
                                   rep.c1_upper):
            rows.append([t, b, e, r, su, bd])
    rec.curves["beta_errors"] = (["t", "beta", "sup_error", "rate_ratio", "sup_u", "sup_bound"], rows)
    return rec


def cmd_alpha(cfg: RunConfig) -> RunRecord:
    rec = RunRecord("alpha", cfg.to_dict())
    setup = make_setup(cfg)
    grid = setup.grid
    with rec.timed("alpha"):
        alpha_setup(setup, [], rec)
    rng = np.random.default_rng(cfg.seed + 2)
    phi = group_average(GridField(grid, random_band_limited(grid, rng))).values
    kernel = green_kernel(setup.omega)
    recon = kernel.reconstruct(phi)
    err = float(np.max(np.abs(recon - phi)))
    rec.stages["green_riesz"] = {"sup_error": err, "shift": kernel.shift, "c1": kernel.c1,
                                 "laplacian_sup": float(np.abs(laplacian_array(setup.omega,
                                                                               phi)).max())}
    rec.check("green_riesz", err <= GREEN_TOL)
    return rec


def cmd_degiorgi(cfg: RunConfig) -> RunRecord:
    rec = RunRecord("degiorgi", cfg.to_dict())
    hand = degiorgi_verify(LevelVolume.from_steps([1.0], [1.0], np.linspace(0, 8, 801)),
                           delta0=1.0)
    rec.stages["step_case"] = {"C_prime_emp": hand.c_prime_emp, "s0": hand.params.s0,
                               "C": hand.params.C, "max_value": hand.max_value}
    rec.check("step_case", hand.passed)
    setup = make_setup(cfg)
    try:
        sols = solve_calibrated_family(setup.chi, setup.omega, setup.F_spec, cfg.t_list,
                                       tol=cfg.tol, max_iter=cfg.max_iter)
    except (SolverError, ValueError) as exc:
        rec.errors["family"] = str(exc)
        return rec
    for sol in sols:
        key = f"t={sol.t:g}"
        v = GridField(setup.grid, -sol.u.values)
        lv = level_volume(v, cell_weights(sol.F_t, setup.omega),
                          default_s_grid(float(v.values.max()), cfg.level_count))
        dg = degiorgi_verify(lv, p=cfg.p, n=setup.grid.n)
        rec.stages[key] = {"C_prime_emp": dg.c_prime_emp, "C_prime_grid": dg.c_prime_grid,
                           "s0": dg.params.s0, "C": dg.params.C, "sup": dg.max_value,
                           "coverage": dg.coverage}
        rec.check(f"{key}.vanishing", dg.passed)
        rec.curves[f"level_volume_t_{sol.t:g}"] = (["s", "phi_s"],
                                                   [[s, p] for s, p in zip(lv.s_grid, lv.samples)])
        rec.curves[f"chain_t_{sol.t:g}"] = (["m", "s", "bound", "measured"],
                                            [list(r) for r in dg.chain])
    return rec


def cmd_linfty(cfg: RunConfig) -> RunRecord:
    return run_linfty_check(cfg)


def cmd_mv(cfg: RunConfig) -> RunRecord:
    return run_mean_value_check(cfg)


COMMANDS = {"grid": cmd_grid, "ma-solve": cmd_ma_solve, "envelope": cmd_envelope,
            "alpha": cmd_alpha, "degiorgi": cmd_degiorgi, "linfty-check": cmd_linfty,
            "mv-check": cmd_mv}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orbifold-ma", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", nargs="?", help="flat TOML config (defaults when omitted)")
        p.add_argument("--out", help="existing output directory (overrides out_dir)")
        p.add_argument("--seed", type=int, help="RNG seed (overrides seed)")
        p.add_argument("--tol", type=float, help="solver tolerance (overrides tol)")
        p.add_argument("--mkdir", action="store_true", help="create the output directory")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if args.out is not None:
        changes["out_dir"] = args.out
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.tol is not None:
        changes["tol"] = args.tol
    return cfg.replace(**changes) if changes else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out_dir)
    if args.mkdir:
        out.mkdir(parents=True, exist_ok=True)
    if not out.is_dir():
        print(f"error: output directory does not exist: {out}", file=sys.stderr)
        return 2
    rec = COMMANDS[args.command](cfg)
    emit_report(rec, out)
    failed = sorted(k for k, ok in rec.assertions.items() if not ok)
    for key, msg in sorted(rec.errors.items()):
        log.error("%s: %s", key, msg)
    print(f"{args.command}: {'PASS' if rec.passed else 'FAIL'} "
          f"({len(rec.assertions) - len(failed)}/{len(rec.assertions)} assertions)")
    for name in failed:
        print(f"  failed: {name}")
    return 0 if rec.passed else 1


if __name__ == "__main__":
    sys.exit(main())
