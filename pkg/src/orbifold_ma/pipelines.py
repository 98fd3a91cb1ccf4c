"""End-to-end certification runs for the uniform L-infinity estimate and the mean-value inequality,
plus deterministic report emission.

Every run returns a ``RunRecord``: per-stage scalars, named pass/fail assertions, CSV curves and
binary fields. ``emit_report`` writes them; timings go to a separate file so the main record is
byte-stable for a fixed config and seed.
"""

from __future__ import annotations

import json
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .alpha import (PshFamily, domination_constant, estimate_alpha, pencil_family,
                    random_band_limited, random_family, avg_lower_bound_check)
from .calculus import (HermitianField, green_kernel, hinv, htrace_prod, ddbar_array, hmin_eig,
                       integrate_array)
from .config import RunConfig, make_chi, make_F, make_grid, make_omega
from .envelope import EnvelopeProblem, envelope_solve, convergence_report
from .estimates import (cell_weights, default_s_grid, degiorgi_verify, energy_bound_check,
                        entropy, epsilon_root, exponent_identity, fact_violations, lz_constant,
                        level_volume)
from .io import atomic_write_bytes, csv_text, field_to_bytes
from .orbifold import GridField, eta_scalar, group_average, tau_scalar
from .solver import MAProblem, MASolution, SolverError, solve_calibrated_family, solve_ma

PHI_TOL = 1e-6
MASS_TOL = 1e-8
NORMALIZATION_TOL = 1e-10
EIG_TOL = 1e-8
# phi_t (spectral) is compared with the finite-difference envelope; both carry O(h^2) error
ORDER_TOL = 1e-6
SHRINK_STEPS = 50


@dataclass(eq=False)
class AuxiliaryCertificate:
    psi: GridField
    A_s: float
    epsilon: float
    Lambda: float
    Phi: GridField
    sup_Phi: float
    variant: str
    bound: float
    residual: float
    scale_defect: float
    mass_defect: float
    min_eig: float
    info: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return (self.sup_Phi <= self.bound + PHI_TOL and self.psi.values.max() == 0.0
                and self.min_eig >= -EIG_TOL and self.mass_defect <= MASS_TOL)

    def summary(self) -> dict:
        out = {"variant": self.variant, "A_s": self.A_s, "epsilon": self.epsilon,
               "Lambda": self.Lambda, "sup_Phi": self.sup_Phi, "bound": self.bound,
               "residual": self.residual, "scale_defect": self.scale_defect,
               "mass_defect": self.mass_defect, "min_eig": self.min_eig,
               "sup_psi": float(self.psi.values.max()), "passed": self.passed}
        out.update(self.info)
        return out


@dataclass(eq=False)
class RunRecord:
    name: str
    config: dict
    stages: dict = field(default_factory=dict)
    assertions: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    fields: dict = field(default_factory=dict)
    blobs: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.errors and all(self.assertions.values())

    def check(self, name: str, ok) -> bool:
        self.assertions[name] = bool(ok)
        return bool(ok)

    @contextmanager
    def timed(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - start


# -- shared setup --------------------------------------------------------------------------

@dataclass(eq=False)
class Setup:
    cfg: RunConfig
    grid: object
    omega: HermitianField
    chi: HermitianField
    F_spec: GridField


def make_setup(cfg: RunConfig) -> Setup:
    grid = make_grid(cfg)
    omega = make_omega(cfg, grid)
    return Setup(cfg, grid, omega, make_chi(cfg, grid, omega), make_F(cfg, grid))


def _theta(setup: Setup, t: float) -> HermitianField:
    return HermitianField(setup.grid, setup.chi.coeffs + t * setup.omega.coeffs)


def _mass(setup: Setup, F: GridField) -> float:
    return integrate_array(setup.grid, np.exp(F.values), setup.omega.det())


def _solve_aux(setup: Setup, t: float, V_t: float, F_t: GridField, weight: np.ndarray,
               warm: GridField, cfg: RunConfig):
    """(omega_hat_t + i ddbar psi)^n = V_t (weight / A) e^{F_t} omega_X^n with sup psi = 0.

    A = int_X weight e^{F_t} omega_X^n, so the right-hand side has total mass V_t.
    """
    grid = setup.grid
    A = integrate_array(grid, weight * np.exp(F_t.values), setup.omega.det())
    dens = GridField(grid, np.log(weight) - math.log(A) + F_t.values)
    mass = V_t * integrate_array(grid, np.exp(dens.values), setup.omega.det())
    problem = MAProblem(_theta(setup, t), setup.omega, dens, lam=0.0, normalization="sup_zero",
                        scale=V_t)
    sol = solve_ma(problem, tol=cfg.tol, max_iter=cfg.max_iter, u0=warm)
    psi_eig = float(hmin_eig(problem.base.coeffs + ddbar_array(grid, sol.u.values)).min())
    return A, sol, abs(mass - V_t) / V_t, psi_eig


def _certified_residual(sol: MASolution) -> float:
    return sol.density_residual if sol.certified_by == "density" else sol.residual_sup


# -- alpha setup (shared by the L-infinity energy chain and the mean-value alpha step) ------

def alpha_setup(setup: Setup, extra: list, record: RunRecord, stage: str = "alpha") -> dict:
    """Family-relative alpha for P(omega_X), with ``extra`` members phi / (C2 + 1) added.

    Returns alpha_star, the domination constant C2 and the alpha used for (C2 + 1) omega_X.
    """
    cfg, omega = setup.cfg, setup.omega
    rng = np.random.default_rng(cfg.seed)
    C2 = max(domination_constant(setup.chi, omega), 0.0)
    fam = random_family(omega, cfg.random_members, rng)
    pens = pencil_family(omega, cfg.pencil_cs, cfg.pencil_depth)
    fam = PshFamily(omega, fam.members + pens.members, fam.provenance + pens.provenance)
    for label, phi in extra:
        fam = fam.add(GridField(setup.grid, phi.values / (C2 + 1.0)), label)
    kernel = green_kernel(omega)
    worst = math.inf
    violations = 0
    for phi in fam.members:
        try:
            avg, bound = avg_lower_bound_check(phi, kernel)
            worst = min(worst, avg - bound)
        except AssertionError:
            violations += 1
    rep = estimate_alpha(fam, omega, cfg.C_target, cfg.alpha_grid, c1=kernel.c1, c2=C2)
    out = {"C2": C2, "alpha_star": rep.alpha_star, "alpha_scaled": rep.alpha_star / (C2 + 1.0),
           "C_target": cfg.C_target, "family_size": len(fam), "c1": kernel.c1,
           "avg_bound_min_slack": worst, "avg_bound_violations": violations}
    record.stages[stage] = out
    record.check(f"{stage}.avg_bound", violations == 0)
    record.check(f"{stage}.alpha_positive", rep.alpha_star > 0)
    record.curves[f"{stage}_matrix"] = (
        ["member"] + [f"alpha={a:g}" for a in rep.alpha_grid],
        [[lab] + [float(x) for x in row] for lab, row in zip(rep.labels, rep.integrals)])
    return out


# -- L-infinity pipeline ----------------------------------------------------------------------

def _envelope_ladder(problem: EnvelopeProblem, cfg: RunConfig):
    rep = convergence_report(problem, cfg.beta_list, tol=cfg.tol)
    solves = {}
    warm = None
    for beta in sorted(set(float(b) for b in cfg.cert_betas) - set(rep.beta_list)):
        warm = envelope_solve(problem, beta, cfg.tol, warm)
        solves[beta] = warm
    return rep, solves


def _linfty_certificate(setup: Setup, t: float, sol: MASolution, u_beta: GridField,
                        V_env: GridField, s: float, k: int) -> AuxiliaryCertificate:
    cfg, n = setup.cfg, setup.grid.n
    phi = sol.u.values
    weight = tau_scalar(-phi + u_beta.values - s, k)
    A, psi_sol, mass_defect, eig = _solve_aux(setup, t, sol.V_t, sol.F_t, weight, sol.u, cfg)
    psi = psi_sol.u
    eps = A ** (1.0 / (n + 1)) * ((n + 1) / n) ** (n / (n + 1))
    Lam = n / (n + 1) * A
    base = -psi.values + u_beta.values + 1.0 + Lam
    Phi = -eps * np.maximum(base, 0.0) ** (n / (n + 1)) - (phi - u_beta.values + s)
    eps_beta = max(0.0, float(np.max(u_beta.values - V_env.values)))
    info = {"t": t, "k": k, "s": s, "eps_beta": eps_beta,
            "psi_below_u_plus_1": bool(np.all(psi.values <= u_beta.values + 1.0)),
            "certified_by": psi_sol.certified_by, "iterations": psi_sol.iterations}
    return AuxiliaryCertificate(psi, A, eps, Lam, GridField(setup.grid, Phi), float(Phi.max()),
                                "linfty", eps_beta, _certified_residual(psi_sol),
                                abs(psi_sol.scale - sol.V_t) / sol.V_t, mass_defect, eig, info)


def run_linfty_check(cfg: RunConfig, record: RunRecord | None = None) -> RunRecord:
    """Calibrated family, envelopes, auxiliary certificates, DeGiorgi and the energy chain per t."""
    rec = record or RunRecord("linfty", cfg.to_dict())
    setup = make_setup(cfg)
    grid, n = setup.grid, setup.grid.n
    if n != 1:
        raise NotImplementedError("the envelope oracle needs n = 1")
    with rec.timed("family"):
        try:
            sols = solve_calibrated_family(setup.chi, setup.omega, setup.F_spec, cfg.t_list,
                                           tol=cfg.tol, max_iter=cfg.max_iter)
        except (SolverError, ValueError) as exc:
            rec.errors["family"] = str(exc)
            return rec
    with rec.timed("alpha"):
        alpha = alpha_setup(setup, [(f"phi_t(t={s.t:g})", s.u) for s in sols], rec)
    gaps, cert_rows, env_rows, dg_rows = {}, [], [], []
    for sol in sols:
        t = sol.t
        key = f"t={t:g}"
        stage = {"V_t": sol.V_t, "iterations": sol.iterations,
                 "residual": _certified_residual(sol), "certified_by": sol.certified_by,
                 "positivity_margin": sol.positivity_margin}
        rec.stages[key] = stage
        try:
            mass = _mass(setup, sol.F_t)
            stage["normalization_defect"] = abs(mass - 1.0)
            rec.check(f"{key}.normalization", abs(mass - 1.0) <= NORMALIZATION_TOL)
            rec.check(f"{key}.solve_residual", stage["residual"] <= cfg.tol)
            stage["entropy"] = entropy(sol.F_t, cfg.p, setup.omega)
            problem = EnvelopeProblem(_theta(setup, t), setup.omega, grid.field(1.0))
            with rec.timed("envelope"):
                env, extra = _envelope_ladder(problem, cfg)
            V_env = env.oracle_envelope
            ubeta = dict(zip(env.beta_list, env.u_beta))
            ubeta.update({b: s.u_beta for b, s in extra.items()})
            for b, e, r, sup_u, bound in zip(env.beta_list, env.sup_errors, env.rate_ratios,
                                             env.sup_u, env.c1_upper):
                env_rows.append([t, b, e, r, sup_u, bound])
            stage["envelope"] = {"fitted_C": env.fitted_C, "ratio_max_min": env.ratio_max_min,
                                 "oracle_residual": env.oracle_residual,
                                 "oracle_min": float(V_env.values.min())}
            rec.check(f"{key}.max_principle", env.max_principle_ok)
            rec.check(f"{key}.envelope_improves", env.sup_errors[-1] <= env.sup_errors[0])

            gap = GridField(grid, V_env.values - sol.u.values)
            gaps[t] = float(np.max(np.abs(gap.values)))
            stage["sup_gap"] = gaps[t]
            stage["ordering_defect"] = float(max(0.0, -gap.values.min()))
            rec.check(f"{key}.ordering", -gap.values.min() <= ORDER_TOL)
            rec.fields[f"phi_t_{t:g}"] = sol.u
            rec.fields[f"envelope_t_{t:g}"] = V_env

            with rec.timed("energy"):
                en = energy_bound_check(sol.F_t, sol.u, V_env, cfg.p, alpha["alpha_scaled"],
                                        cfg.C_target, setup.omega, order_tol=ORDER_TOL)
            stage["E_t"] = en.E_t
            stage["energy_links"] = {link.name: {"lhs": link.lhs, "rhs": link.rhs,
                                                 "slack": link.slack} for link in en.links}
            for link in en.links:
                rec.check(f"{key}.energy.{link.name}", link.holds)

            with rec.timed("degiorgi"):
                lv = level_volume(gap, cell_weights(sol.F_t, setup.omega),
                                  default_s_grid(float(gap.values.max()), cfg.level_count))
                dg = degiorgi_verify(lv, p=cfg.p, n=n, E_t=max(en.E_t, 1e-300))
            stage["degiorgi"] = {"C_prime_emp": dg.c_prime_emp, "C_prime_grid": dg.c_prime_grid,
                                 "s0": dg.params.s0, "C": dg.params.C, "delta0": dg.params.delta0,
                                 "max_gap": dg.max_value, "coverage": dg.coverage}
            rec.check(f"{key}.degiorgi_vanishing", dg.passed)
            rec.check(f"{key}.sup_gap_le_C", gaps[t] <= dg.params.C)
            rec.curves[f"level_volume_t_{t:g}"] = (["s", "phi_s"],
                                                    [[s, v] for s, v in zip(lv.s_grid, lv.samples)])
            rec.curves[f"degiorgi_chain_t_{t:g}"] = (["m", "s", "bound", "measured"],
                                                      [list(r) for r in dg.chain])
            dg_rows.append([t, dg.c_prime_emp, dg.params.s0, dg.params.C, gaps[t]])

            with rec.timed("certificates"):
                _linfty_certificates(setup, rec, key, sol, problem, V_env, ubeta, cert_rows)
        except (SolverError, ValueError, ArithmeticError, RuntimeError) as exc:
            rec.errors[key] = f"{type(exc).__name__}: {exc}"

    if gaps:
        hi, lo = max(gaps.values()), min(gaps.values())
        rec.stages["uniformity"] = {"max_gap": hi, "min_gap": lo,
                                    "ratio": hi / lo if lo > 0 else (1.0 if hi == 0 else math.inf),
                                    "C_inf": hi}
        rec.check("uniformity.max_le_2min", hi <= 2.0 * lo or hi <= 2.0 * cfg.tol)
    rec.curves["envelope_errors"] = (["t", "beta", "sup_error", "rate_ratio", "sup_u", "sup_bound"],
                                     env_rows)
    rec.curves["certificates_linfty"] = (
        ["t", "k", "beta", "s", "A", "epsilon", "Lambda", "sup_Phi", "eps_beta", "passed"], cert_rows)
    rec.curves["degiorgi_summary"] = (["t", "C_prime_emp", "s0", "C", "sup_gap"], dg_rows)
    return rec


def _linfty_certificates(setup, rec, key, sol, problem, V_env, ubeta, rows):
    cfg = setup.cfg
    sup_gap = float(np.max(V_env.values - sol.u.values))
    certs = {}
    for beta in sorted(set(float(b) for b in cfg.cert_betas)):
        for frac in cfg.s_fractions:
            s = frac * sup_gap
            for k in cfg.k_list:
                b, u = beta, ubeta[beta]
                cert = _linfty_certificate(setup, sol.t, sol, u, V_env, s, int(k))
                warm_solve = None
                # the estimate needs psi <= u_beta + 1; raise beta until it holds
                while not cert.info["psi_below_u_plus_1"] and 2 * b <= cfg.beta_max:
                    b *= 2
                    warm_solve = envelope_solve(problem, b, cfg.tol, warm_solve)
                    ubeta[b] = warm_solve.u_beta
                    cert = _linfty_certificate(setup, sol.t, sol, ubeta[b], V_env, s, int(k))
                cert.info["beta"], cert.info["beta_requested"] = b, beta
                name = f"{key}.cert(beta={beta:g},s={frac:g},k={int(k)})"
                certs[name] = cert.summary()
                rec.check(name, cert.passed and cert.info["psi_below_u_plus_1"])
                rows.append([sol.t, int(k), b, s, cert.A_s, cert.epsilon, cert.Lambda,
                             cert.sup_Phi, cert.bound, cert.passed])
    rec.stages[key]["certificates"] = certs


# -- mean-value pipeline ---------------------------------------------------------------------

@dataclass(eq=False)
class VSample:
    v: GridField
    index: int
    shrink_steps: int
    reduced: bool
    l1: float
    lap_min: float


def _omega_t(setup: Setup, t: float, phi: GridField) -> np.ndarray:
    return _theta(setup, t).coeffs + ddbar_array(setup.grid, phi.values)


def l1_norm(setup: Setup, v: np.ndarray, V_t: float, F_t: GridField) -> float:
    """||v||_{L^1(omega_t^n)} with omega_t^n = V_t e^{F_t} omega_X^n."""
    return V_t * integrate_array(setup.grid, np.abs(v) * np.exp(F_t.values), setup.omega.det())


def reduce_l1(setup: Setup, v: np.ndarray, V_t: float, F_t: GridField, V0: float):
    """Replace v by V0 v / ||v||_1 when ||v||_1 > V0; idempotent."""
    norm = l1_norm(setup, v, V_t, F_t)
    if norm > V0:
        return V0 * v / norm, True
    return v, False


def sample_v(setup: Setup, t: float, sol: MASolution, rng: np.random.Generator, count: int,
             a: float, V0: float, log: list) -> list:
    """Random admissible v: group averaged, mean zero for omega_t^n, Delta_t v >= -a on {v > 0}."""
    grid, cfg = setup.grid, setup.cfg
    g_inv = hinv(_omega_t(setup, t, sol.u))
    w = np.exp(sol.F_t.values) * setup.omega.det()
    out = []
    index = 0
    while len(out) < count:
        index += 1
        if index > 20 * count:
            raise RuntimeError("sampler failed to produce enough admissible v")
        raw = group_average(GridField(grid, random_band_limited(grid, rng, cfg.v_kmax))).values
        raw = raw * rng.uniform(0.5, 4.0)
        raw = raw - integrate_array(grid, raw, w) / integrate_array(grid, np.ones(grid.shape), w)
        if np.max(np.abs(raw)) == 0.0:
            continue
        lap = htrace_prod(g_inv, ddbar_array(grid, raw)).real
        steps = 0
        while steps < SHRINK_STEPS and np.min(lap[raw > 0], initial=0.0) < -a:
            raw, lap, steps = 0.5 * raw, 0.5 * lap, steps + 1
        if np.min(lap[raw > 0], initial=0.0) < -a:
            log.append(f"sample {index}: Laplacian floor not met after {SHRINK_STEPS} halvings")
            continue
        v, reduced = reduce_l1(setup, raw, sol.V_t, sol.F_t, V0)
        lap_min = float(np.min(htrace_prod(g_inv, ddbar_array(grid, v)).real[v > 0], initial=0.0))
        out.append(VSample(GridField(grid, v), index, steps, reduced,
                           l1_norm(setup, v, sol.V_t, sol.F_t), lap_min))
    return out


def _mv_certificate(setup: Setup, t: float, sol: MASolution, v: GridField, s: float, k: int,
                    a: float, C_inf: float) -> AuxiliaryCertificate:
    cfg, n = setup.cfg, setup.grid.n
    weight = eta_scalar(v.values - s, k)
    A, psi_sol, mass_defect, eig = _solve_aux(setup, t, sol.V_t, sol.F_t, weight, sol.u, cfg)
    psi = psi_sol.u
    eps = epsilon_root(n, a, A)
    Lam = C_inf + 1.0
    base = -psi.values + sol.u.values + Lam
    Phi = -eps * np.maximum(base, 0.0) ** (n / (n + 1)) + v.values - s
    info = {"t": t, "k": k, "s": s, "base_min": float(base.min()),
            "certified_by": psi_sol.certified_by, "iterations": psi_sol.iterations}
    return AuxiliaryCertificate(psi, A, eps, Lam, GridField(setup.grid, Phi), float(Phi.max()),
                                "mean_value", 0.0, _certified_residual(psi_sol),
                                abs(psi_sol.scale - sol.V_t) / sol.V_t, mass_defect, eig, info)


def _alpha_step(setup: Setup, cert: AuxiliaryCertificate, v: GridField, s: float, F_t: GridField,
                alpha0: float, C1: float) -> dict:
    """Exponential integral over Omega_s against exp(a0 C1 Lambda) int exp(-a0 C1 psi)."""
    grid, n = setup.grid, setup.grid.n
    det = setup.omega.det()
    omega_s = v.values > s
    A = cert.A_s
    f_full = alpha0 * np.where(omega_s, v.values - s, 0.0) ** ((n + 1) / n) / A ** (1.0 / n)
    lhs = integrate_array(grid, np.where(omega_s, np.exp(f_full), 0.0), det)
    expo = -alpha0 * C1 * cert.psi.values
    rhs = math.exp(alpha0 * C1 * cert.Lambda) * integrate_array(grid, np.exp(expo), det)
    # pointwise Fact inequality with f = (1/2) a0 (v - s)^{(n+1)/n} / A^{1/n} on Omega_s
    fact_fail = fact_violations(0.5 * f_full[omega_s], F_t.values[omega_s], setup.cfg.p)
    return {"lhs": lhs, "C3": rhs, "holds": bool(lhs <= rhs), "fact_violations": int(fact_fail)}


def _holder_closure(setup: Setup, v: GridField, s: float, F_t: GridField, A_sk: float) -> dict:
    """A_s <= I^{1/q} phi(s)^{1/p'} with q = p(n+1)/n and C5 = (I / A_{s,k}^{p/n})^{1/q}."""
    grid, n, p = setup.grid, setup.grid.n, setup.cfg.p
    w = np.exp(F_t.values) * setup.omega.det()
    omega_s = v.values > s
    d = np.where(omega_s, v.values - s, 0.0)
    q = p * (n + 1) / n
    p_dual = q / (q - 1.0)
    A_s = integrate_array(grid, d, w)
    I = integrate_array(grid, d ** q, w)
    phi_s = integrate_array(grid, omega_s.astype(float), w)
    holder_rhs = I ** (1.0 / q) * phi_s ** (1.0 / p_dual)
    C5 = (I / A_sk ** (p / n)) ** (1.0 / q) if A_sk > 0 else math.inf
    closure_rhs = C5 * A_sk ** (1.0 / (n + 1)) * phi_s ** (1.0 / p_dual)
    return {"A_s": A_s, "holder_rhs": holder_rhs, "C5": C5, "closure_rhs": closure_rhs,
            "phi_s": phi_s, "holds": bool(A_s <= holder_rhs * (1 + 1e-12) + 1e-300)}


def run_mean_value_check(cfg: RunConfig, v_samples: int | None = None,
                         linfty: RunRecord | None = None) -> RunRecord:
    """Sampled v at t = cfg.mv_t: certificates, sup v <= C(1 + ||v||_1), alpha step, Hoelder."""
    rec = RunRecord("mean_value", cfg.to_dict())
    count = cfg.v_samples if v_samples is None else v_samples
    setup = make_setup(cfg)
    grid, n, t, a = setup.grid, setup.grid.n, cfg.mv_t, cfg.a
    if linfty is None:
        with rec.timed("linfty"):
            linfty = run_linfty_check(cfg)
    uni = linfty.stages.get("uniformity")
    if uni is None:
        rec.errors["linfty"] = "no L-infinity bound available"
        return rec
    C_inf = uni["C_inf"] + cfg.linfty_margin
    rec.stages["linfty_bound"] = {"measured": uni["C_inf"], "margin": cfg.linfty_margin,
                                  "C_inf": C_inf, "Lambda": C_inf + 1.0}
    with rec.timed("solve"):
        sol = solve_calibrated_family(setup.chi, setup.omega, setup.F_spec, [t], tol=cfg.tol,
                                      max_iter=cfg.max_iter)[0]
    V0 = integrate_array(grid, np.ones(grid.shape), setup.chi.det())
    rec.stages["solve"] = {"t": t, "V_t": sol.V_t, "V0": V0,
                           "normalization_defect": abs(_mass(setup, sol.F_t) - 1.0)}
    rec.check("solve.normalization", abs(_mass(setup, sol.F_t) - 1.0) <= NORMALIZATION_TOL)

    with rec.timed("alpha"):
        alpha = alpha_setup(setup, [], rec)
    C1 = lz_constant(n, a) ** ((n + 1) / n)
    alpha0 = 0.5 * alpha["alpha_scaled"] / C1
    ratio = C1 * alpha0 / alpha["alpha_scaled"] if alpha["alpha_scaled"] > 0 else math.inf
    rec.stages["alpha_step"] = {"C1": C1, "alpha0": alpha0, "C1_alpha0_over_alpha": ratio}
    rec.check("alpha_step.ratio_lt_1", ratio < 1.0)

    rng = np.random.default_rng(cfg.seed + 1)
    log: list = []
    with rec.timed("sampling"):
        samples = sample_v(setup, t, sol, rng, count, a, V0, log)
    rec.stages["sampler"] = {"requested": count, "accepted": len(samples), "skipped": log}
    weights = cell_weights(sol.F_t, setup.omega)
    ident = exponent_identity(Fraction(cfg.p).limit_denominator(10 ** 6), n)
    rec.stages["exponent_identity"] = ident
    rec.check("exponent_identity", ident["holds"])

    rows, cert_rows = [], []
    results = []
    for smp in samples:
        v = smp.v
        sup_v = float(v.values.max())
        with rec.timed("degiorgi"):
            lv = level_volume(v, weights, default_s_grid(max(sup_v, 0.0), cfg.level_count))
            dg = degiorgi_verify(lv, p=cfg.p, n=n)
        entry = {"index": smp.index, "sup_v": sup_v, "l1": smp.l1, "reduced": smp.reduced,
                 "shrink_steps": smp.shrink_steps, "lap_min_on_positive": smp.lap_min,
                 "C": dg.params.C, "C_prime_emp": dg.c_prime_emp, "degiorgi_ok": dg.passed,
                 "certificates": {}}
        for frac in cfg.s_fractions:
            s = frac * sup_v
            for k in cfg.k_list:
                tag = f"s={frac:g},k={int(k)}"
                try:
                    with rec.timed("certificates"):
                        cert = _mv_certificate(setup, t, sol, v, s, int(k), a, C_inf)
                    c = cert.summary()
                    c["alpha_step"] = _alpha_step(setup, cert, v, s, sol.F_t, alpha0, C1)
                    c["holder"] = _holder_closure(setup, v, s, sol.F_t, cert.A_s)
                    c["A_le_2"] = cert.A_s <= 2.0
                except (SolverError, ValueError) as exc:
                    c = {"error": str(exc), "passed": False}
                entry["certificates"][tag] = c
                cert_rows.append([smp.index, frac, int(k), c.get("A_s", math.nan),
                                  c.get("epsilon", math.nan), c.get("sup_Phi", math.nan),
                                  c["passed"]])
        results.append(entry)

    C_run = max((e["C"] for e in results), default=math.nan)
    failures = {"certificate": 0, "alpha_step": 0, "holder": 0, "fact": 0, "sup_bound": 0,
                "degiorgi": 0}
    for e in results:
        bound = C_run * (1.0 + e["l1"])
        e["sup_bound_rhs"] = bound
        failures["sup_bound"] += e["sup_v"] > bound
        failures["degiorgi"] += not e["degiorgi_ok"]
        for c in e["certificates"].values():
            failures["certificate"] += not c["passed"]
            if "alpha_step" in c:
                failures["alpha_step"] += not c["alpha_step"]["holds"]
                failures["fact"] += c["alpha_step"]["fact_violations"]
                failures["holder"] += not c["holder"]["holds"]
        rows.append([e["index"], e["sup_v"], e["l1"], bound, e["C"], e["reduced"]])
    rec.stages["samples"] = results
    rec.stages["summary"] = {"C_run": C_run, "failures": failures}
    rec.check("samples.count", len(samples) == count)
    for name, value in failures.items():
        rec.check(f"samples.{name}", value == 0)
    rec.curves["mean_value_samples"] = (["index", "sup_v", "l1", "C_1_plus_l1", "C", "reduced"], rows)
    rec.curves["certificates_mean_value"] = (
        ["index", "s_fraction", "k", "A", "epsilon", "sup_Phi", "passed"], cert_rows)
    return rec


# -- report emission ---------------------------------------------------------------------------

UNITS = {
    "lengths": "flat torus coordinates, unit square lattice",
    "volumes": "omega_X^n normalised so the orbifold has volume 1",
    "potentials": "dimensionless, sup normalised",
    "timings": "seconds, wall clock, in the separate timings file",
}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, (str, type(None))):
        return x
    return repr(x)


def report_text(run: RunRecord) -> str:
    doc = {"name": run.name, "version": __version__, "config": run.config, "stages": run.stages,
           "assertions": run.assertions, "errors": run.errors, "passed": run.passed,
           "units": UNITS,
           "files": {"curves": sorted(f"{run.name}_{k}.csv" for k in run.curves),
                     "fields": sorted([f"{run.name}_{k}.bin" for k in run.fields]
                                      + [f"{run.name}_{k}" for k in run.blobs])}}
    return json.dumps(_jsonable(doc), sort_keys=True, indent=1) + "\n"


def emit_report(run: RunRecord, out_dir) -> list:
    """Write the record, its CSV curves and binary fields; returns the written paths."""
    out = Path(out_dir)
    if not out.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {out}")
    payloads = {f"{run.name}_report.json": report_text(run).encode("utf-8"),
                f"{run.name}_timings.json": (json.dumps(_jsonable(run.timings), sort_keys=True,
                                                        indent=1) + "\n").encode("utf-8")}
    for key, (header, rows) in run.curves.items():
        payloads[f"{run.name}_{key}.csv"] = csv_text(header, rows).encode("utf-8")
    for key, f in run.fields.items():
        payloads[f"{run.name}_{key}.bin"] = field_to_bytes(f)
    for key, data in run.blobs.items():
        payloads[f"{run.name}_{key}"] = data
    written = []
    for name in sorted(payloads):
        atomic_write_bytes(out / name, payloads[name])
        written.append(out / name)
    return written
