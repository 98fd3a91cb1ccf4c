"""psh envelopes by beta-penalisation, with a PSOR obstacle-problem oracle for n = 1.

For a Kahler witness phi (omega := theta + i ddbar phi > 0) the penalised equation
(theta + i ddbar u_b)^n = c e^{b u_b} dV becomes, after u_b = u / b + phi,

    (b omega + i ddbar u)^n = c e^{u + b phi} (dV / omega^n) (b omega)^n,

a lambda = 1 problem in the positive cone of b omega. That is the form handed to the solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .calculus import HermitianField, hdet, integrate, integrate_array, kahler_witness
from .orbifold import GridField, group_average
from .solver import MAProblem, MASolution, solve_ma


@dataclass(eq=False)
class EnvelopeProblem:
    """theta: smooth representative; dV: volume density relative to omega_x^n."""

    theta: HermitianField
    omega_x: HermitianField
    dV: GridField
    phi_kahler: GridField | None = None

    def __post_init__(self):
        if np.any(self.dV.values <= 0):
            raise ValueError("dV must be a positive density")
        if self.phi_kahler is None:
            self.phi_kahler = kahler_witness(self.theta)
        omega = self.kahler_form()
        if np.any(omega.min_eig() <= 0):
            raise ValueError("theta + i ddbar phi_kahler is not positive definite")

    @property
    def grid(self):
        return self.theta.grid

    def kahler_form(self) -> HermitianField:
        from .calculus import i_ddbar
        return self.theta + i_ddbar(self.phi_kahler)

    @property
    def scale(self) -> float:
        """c = int theta^n / int dV."""
        grid = self.grid
        top = integrate(grid.field(1.0), self.theta)
        vol = integrate_array(grid, self.dV.values, self.omega_x.det())
        if top <= 0:
            raise ValueError("int theta^n <= 0: class is not big")
        return top / vol

    def density_ratio(self) -> np.ndarray:
        """theta^n / (c dV) as a grid array."""
        return self.theta.det() / (self.scale * self.dV.values * self.omega_x.det())

    def sup_bound(self, beta: float) -> float:
        """(1/beta) log sup theta^n / (c dV), the maximum-principle bound on sup u_beta."""
        top = float(self.density_ratio().max())
        return math.log(top) / beta if top > 0 else -math.inf


@dataclass(eq=False)
class EnvelopeSolve:
    beta: float
    u_beta: GridField
    solution: MASolution


def envelope_solve(problem: EnvelopeProblem, beta: float, tol: float = 1e-10,
                   warm: EnvelopeSolve | None = None, max_iter: int = 100) -> EnvelopeSolve:
    if beta < 1:
        raise ValueError("beta must be >= 1")
    grid = problem.grid
    omega = problem.kahler_form()
    phi = problem.phi_kahler.values
    ref = omega.scaled(beta)
    F = beta * phi + np.log(problem.dV.values * problem.omega_x.det() / omega.det())
    mp = MAProblem(ref, ref, GridField(grid, F), lam=1.0, normalization="none",
                   scale=problem.scale)
    u0 = None
    if warm is not None:
        u0 = GridField(grid, (beta / warm.beta) * warm.solution.u.values)
    sol = solve_ma(mp, tol=tol, max_iter=max_iter, u0=u0)
    return EnvelopeSolve(beta, GridField(grid, sol.u.values / beta + phi), sol)


def envelope_beta(problem: EnvelopeProblem, beta: float, tol: float = 1e-10) -> GridField:
    """u_beta solving (theta + i ddbar u)^n = c e^{beta u} dV."""
    return envelope_solve(problem, beta, tol).u_beta


def _fd_operator(w: np.ndarray, h: float) -> np.ndarray:
    """M w = -(1/4) Delta_h w (5-point), so theta + i ddbar u = theta + M w for u = -w."""
    lap = (np.roll(w, 1, 0) + np.roll(w, -1, 0) + np.roll(w, 1, 1) + np.roll(w, -1, 1) - 4 * w)
    return -lap / (4 * h * h)


def envelope_oracle_1d(problem: EnvelopeProblem, sweep_tol: float = 1e-12,
                       max_sweeps: int = 200_000) -> GridField:
    """Envelope of theta for n = 1 from the finite-difference complementarity problem.

    With w = -u: w >= 0, theta + M w >= 0, w (theta + M w) = 0, M = -(1/4) Delta_h. Solved by
    red-black projected SOR until the sup-change of a sweep is <= sweep_tol.
    """
    grid = problem.grid
    if grid.n != 1:
        raise NotImplementedError("the obstacle oracle is implemented for n = 1 only")
    h = grid.spacing
    theta = problem.theta.coeffs[..., 0, 0].real
    diag = 1.0 / (h * h)
    relax = 2.0 / (1.0 + math.sin(2 * math.pi * h))
    ii, jj = np.indices(grid.shape)
    colours = [(ii + jj) % 2 == 0, (ii + jj) % 2 == 1]
    w = np.zeros(grid.shape)
    for sweep in range(max_sweeps):
        change = 0.0
        for mask in colours:
            resid = theta + _fd_operator(w, h)
            new = np.maximum(0.0, w - relax * resid / diag)
            change = max(change, float(np.max(np.abs(new - w)[mask])))
            w = np.where(mask, new, w)
        if change <= sweep_tol:
            break
    else:
        raise RuntimeError("PSOR did not reach its fixed point")
    return group_average(GridField(grid, -w))


def complementarity_residual(problem: EnvelopeProblem, u: GridField) -> float:
    """sup |min(-u, theta + M(-u))| for the discrete obstacle problem."""
    theta = problem.theta.coeffs[..., 0, 0].real
    w = -u.values
    return float(np.max(np.abs(np.minimum(w, theta + _fd_operator(w, problem.grid.spacing)))))


@dataclass(eq=False)
class EnvelopeReport:
    beta_list: list
    u_beta: list
    oracle_envelope: GridField
    sup_errors: list
    rate_ratios: list
    fitted_C: float
    ratio_max_min: float
    c1_upper: list
    sup_u: list
    residuals: list
    certified_by: list
    max_principle_ok: bool
    monotone_ok: bool
    rate_ok: bool
    improves: bool
    oracle_residual: float
    extras: dict = field(default_factory=dict)


def convergence_report(problem: EnvelopeProblem, beta_list, tol: float = 1e-10,
                       max_principle_slack: float = 1e-8) -> EnvelopeReport:
    """sup |u_beta - oracle| per beta with the log(beta)/beta rate diagnostics."""
    betas = [float(b) for b in beta_list]
    if problem.grid.n != 1:
        raise NotImplementedError("convergence reports need the n = 1 oracle")
    if len(betas) < 4 or any(b1 <= b0 for b0, b1 in zip(betas, betas[1:])):
        raise ValueError("beta_list must be increasing with at least 4 entries")
    oracle = envelope_oracle_1d(problem)
    solves, warm = [], None
    for beta in betas:
        warm = envelope_solve(problem, beta, tol, warm)
        solves.append(warm)
    errors = [float(np.max(np.abs(s.u_beta.values - oracle.values))) for s in solves]
    rates = [e * b / math.log(b) for e, b in zip(errors, betas)]
    bounds = [problem.sup_bound(b) for b in betas]
    sups = [s.u_beta.sup() for s in solves]
    positive = [r for r in rates if r > 0]
    ratio = max(positive) / min(positive) if positive else 1.0
    # one-entry grace for the pre-asymptotic regime
    monotone = all(e1 <= e0 for e0, e1 in zip(errors[1:], errors[2:]))
    return EnvelopeReport(
        beta_list=betas, u_beta=[s.u_beta for s in solves], oracle_envelope=oracle,
        sup_errors=errors, rate_ratios=rates, fitted_C=max(rates), ratio_max_min=ratio,
        c1_upper=bounds, sup_u=sups,
        residuals=[s.solution.density_residual if s.solution.certified_by == "density"
                   else s.solution.residual_sup for s in solves],
        certified_by=[s.solution.certified_by for s in solves],
        max_principle_ok=all(s <= b + max_principle_slack for s, b in zip(sups, bounds)),
        monotone_ok=monotone, rate_ok=ratio <= 3.0, improves=errors[-1] < errors[0],
        oracle_residual=complementarity_residual(problem, oracle),
    )
