"""Damped Newton solver for (base + i ddbar u)^n = c e^{lambda u + F} reference^n.

Two residual forms are used. The log form R = log D(u) - log c - lambda u - F is the
certification metric. Its rounding floor is about eps * max(target) / min(target), so when
the target c e^{lambda u + F} spans more than three decades (envelope solves at large beta)
the iteration switches to the density form D(u) - c e^{lambda u + F}, certified by its
sup-norm relative to the largest target value.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .calculus import (HermitianField, ddbar_array, hadj, hdet, hinv, hmin_eig, htrace_prod,
                       integrate, integrate_array, kahler_witness, laplacian_symbol)
from .orbifold import GridField

log = logging.getLogger(__name__)

NORMALIZATIONS = ("sup_zero", "mean_zero", "none")
DEGENERATE_RATIO = 1e-3
DENSITY_FLOOR = 1e-10
RAMP_STAGES = 8


class SolverError(RuntimeError):
    """Newton failure; ``history`` holds the per-iteration records gathered so far."""

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = list(history or [])


@dataclass(eq=False)
class MAProblem:
    """(base + i ddbar u)^n = scale * exp(lam * u + density_log) * reference^n."""

    base: HermitianField
    reference: HermitianField
    density_log: GridField
    lam: float = 0.0
    normalization: str = "sup_zero"
    scale: float = 1.0

    def __post_init__(self):
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.lam == 0 and self.normalization == "none":
            raise ValueError("lambda = 0 needs a normalization (solution defined up to constants)")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if np.any(self.reference.min_eig() <= 0):
            raise ValueError("reference form must be positive definite")

    @property
    def grid(self):
        return self.base.grid


@dataclass(eq=False)
class MASolution:
    u: GridField
    residual_sup: float
    positivity_margin: float
    iterations: int
    scale: float
    certified_by: str
    density_residual: float
    history: list = field(default_factory=list)
    t: float | None = None
    V_t: float | None = None
    F_t: GridField | None = None


@dataclass
class _State:
    u: np.ndarray
    A: np.ndarray
    margin: float
    D: np.ndarray
    T: np.ndarray
    c: float
    log_res: float
    den_res: float
    degenerate: bool


def _fresh_scale(problem: MAProblem, detA, F, ref_det) -> float:
    grid = problem.grid
    return integrate_array(grid, np.ones(grid.shape), detA) / integrate_array(grid, np.exp(F), ref_det)


def _evaluate(problem: MAProblem, u: np.ndarray, F: np.ndarray, ref_det: np.ndarray) -> _State:
    grid = problem.grid
    A = problem.base.coeffs + ddbar_array(grid, u)
    margin = float(hmin_eig(A).min())
    detA = hdet(A)
    D = detA / ref_det
    c = _fresh_scale(problem, detA, F, ref_det) if problem.lam == 0 else problem.scale
    T = c * np.exp(problem.lam * u + F)
    tmax = float(T.max())
    if margin > 0 and np.all(D > 0):
        log_res = float(np.max(np.abs(np.log(D) - np.log(T))))
    else:
        log_res = np.inf
    den_res = float(np.max(np.abs(D - T))) / tmax
    degenerate = float(T.min()) < DEGENERATE_RATIO * tmax
    return _State(u, A, margin, D, T, c, log_res, den_res, degenerate)


def residual(problem: MAProblem, u: GridField) -> float:
    """sup |log D(u) - log c - lam u - F|, or +inf where base + i ddbar u is not positive."""
    ref_det = problem.reference.det()
    A = problem.base.coeffs + ddbar_array(problem.grid, u.values)
    if np.any(hmin_eig(A) <= 0):
        return np.inf
    D = hdet(A) / ref_det
    target = np.log(problem.scale) + problem.lam * u.values + problem.density_log.values
    return float(np.max(np.abs(np.log(D) - target)))


def _mode(state: _State) -> str:
    return "density" if (state.degenerate or not np.isfinite(state.log_res)) else "log"


def _merit(state: _State, mode: str) -> float:
    return state.den_res if mode == "density" else state.log_res


def _admissible(state: _State, mode: str, ref_scale: float) -> bool:
    if mode == "log":
        return state.margin > 0 and np.isfinite(state.log_res)
    return state.margin > -DENSITY_FLOOR * ref_scale


def _converged(state: _State, tol: float, ref_scale: float) -> str | None:
    if state.margin > 0 and state.log_res <= tol:
        return "log"
    if state.degenerate and state.den_res <= tol and state.margin > -DENSITY_FLOOR * ref_scale:
        return "density"
    return None


def _newton_direction(problem: MAProblem, state: _State, mode: str, ref_det: np.ndarray) -> np.ndarray:
    grid = problem.grid
    lam = problem.lam
    if mode == "log":
        B = hinv(state.A)
        w = np.full(grid.shape, lam)
        rhs = -(np.log(state.D) - np.log(state.T))
        weight = hdet(state.A)
    else:
        B = hadj(state.A) / ref_det[..., None, None]
        w = lam * state.T
        rhs = -(state.D - state.T)
        weight = ref_det
    if lam == 0:
        # constants span the kernel; project the right-hand side onto the range
        rhs = rhs - np.sum(rhs * weight) / np.sum(weight)

    shape = grid.shape

    def matvec(x):
        x = x.reshape(shape)
        return (htrace_prod(B, ddbar_array(grid, x)) - w * x).ravel()

    n = grid.n
    Bbar = B.reshape(-1, n, n).mean(axis=0)
    sym = laplacian_symbol(grid, Bbar) - float(w.mean())
    inv = np.zeros(shape)
    nz = np.abs(sym) > 1e-300
    inv[nz] = 1.0 / sym[nz]
    if lam == 0:
        inv.flat[0] = 0.0

    def precond(x):
        return np.fft.ifftn(np.fft.fftn(x.reshape(shape)) * inv).real.ravel()

    N = grid.size
    L = LinearOperator((N, N), matvec=matvec, dtype=float)
    M = LinearOperator((N, N), matvec=precond, dtype=float)
    x0 = precond(rhs.ravel())
    delta, info = gmres(L, rhs.ravel(), x0=x0, rtol=1e-11, atol=0.0, restart=60, maxiter=30, M=M)
    if info < 0:
        raise SolverError("linear solve broke down")
    delta = delta.reshape(shape)
    if lam == 0:
        delta = delta - delta.mean()
    return delta


def _ref_scale(problem: MAProblem) -> float:
    """Largest eigenvalue of the reference form; sets the size of the density-mode floor."""
    n = problem.grid.n
    return float(np.linalg.eigvalsh(problem.reference.coeffs.reshape(-1, n, n)).max())


def _newton(problem: MAProblem, F: np.ndarray, u0: np.ndarray, tol: float, max_iter: int,
            history: list) -> tuple[_State, str, int]:
    ref_det = problem.reference.det()
    ref_scale = _ref_scale(problem)
    state = _evaluate(problem, u0, F, ref_det)
    for it in range(max_iter + 1):
        cert = _converged(state, tol, ref_scale)
        if cert is not None:
            return state, cert, it
        if it == max_iter:
            break
        mode = _mode(state)
        if not _admissible(state, mode, ref_scale):
            raise SolverError("iterate left the positive cone", history)
        merit = _merit(state, mode)
        delta = _newton_direction(problem, state, mode, ref_det)
        step = 1.0
        for _ in range(21):
            trial = _evaluate(problem, state.u + step * delta, F, ref_det)
            if _admissible(trial, mode, ref_scale) and _merit(trial, mode) < merit:
                break
            step *= 0.5
        else:
            raise SolverError(f"line search failed at iteration {it} ({mode} merit {merit:.3e})", history)
        history.append({"mode": mode, "step": step, "merit_before": merit,
                        "merit_after": _merit(trial, mode), "log_residual": trial.log_res,
                        "margin": trial.margin})
        state = trial
    raise SolverError(f"no convergence in {max_iter} iterations", history)


def _initial_iterate(problem: MAProblem, u0: GridField | None) -> np.ndarray:
    grid = problem.grid
    if u0 is not None:
        # warm starts from density-certified solves may sit on the floor of the cone
        start = u0.values.copy()
        if hmin_eig(problem.base.coeffs + ddbar_array(grid, start)).min() > -DENSITY_FLOOR * _ref_scale(problem):
            return start
    else:
        start = np.zeros(grid.shape)
        if problem.base.min_eig().min() > 0:
            return start
    # not in the positive cone: move to the constant-coefficient representative
    witness = kahler_witness(problem.base).values
    if hmin_eig(problem.base.coeffs + ddbar_array(grid, witness)).min() <= 0:
        raise SolverError("base class has no positive representative (class not Kahler)")
    return witness


def solve_ma(problem: MAProblem, tol: float = 1e-10, max_iter: int = 100,
             u0: GridField | None = None) -> MASolution:
    """Solve the Monge-Ampere problem by damped Newton, with a continuity ramp as fallback.

    The Newton system tr(B i ddbar delta) - w delta = rhs is solved by GMRES preconditioned with
    the Fourier symbol of the mean coefficients. Accepted steps keep the form positive and
    strictly decrease the merit. If Newton from the start fails, the log-density is deformed
    from F_0 (which the start solves exactly) to F in RAMP_STAGES stages.
    """
    grid = problem.grid
    F = problem.density_log.values
    start = _initial_iterate(problem, u0)
    history: list = []
    try:
        state, cert, iters = _newton(problem, F, start, tol, max_iter, history)
    except SolverError as err:
        log.info("direct Newton failed (%s); ramping", err)
        ref_det = problem.reference.det()
        s0 = _evaluate(problem, start, F, ref_det)
        F0 = np.log(s0.D) - np.log(s0.c) - problem.lam * start
        u = start
        iters = 0
        for stage in range(1, RAMP_STAGES + 1):
            frac = stage / RAMP_STAGES
            Fs = F0 + frac * (F - F0)
            try:
                state, cert, k = _newton(problem, Fs, u, tol, max_iter, history)
            except SolverError as err2:
                raise SolverError(f"continuity ramp failed at stage {stage}: {err2}", history) from err2
            u = state.u
            iters += k

    u = state.u
    if problem.lam == 0:
        if problem.normalization == "sup_zero":
            u = u - u.max()
        elif problem.normalization == "mean_zero":
            ref_det = problem.reference.det()
            u = u - integrate_array(grid, u, ref_det) / integrate_array(grid, np.ones(grid.shape), ref_det)
    return MASolution(u=GridField(grid, u), residual_sup=state.log_res,
                      positivity_margin=state.margin, iterations=iters, scale=state.c,
                      certified_by=cert, density_residual=state.den_res, history=history)


def solve_calibrated_family(chi: HermitianField, omega_x: HermitianField, F_spec: GridField,
                            t_list, tol: float = 1e-10, max_iter: int = 100) -> list[MASolution]:
    """Solve (chi + t omega_x + i ddbar phi_t)^n = V_t e^{F_t} omega_x^n with sup phi_t = 0.

    F_t is F_spec shifted so that int e^{F_t} omega_x^n = 1, and V_t = int (chi + t omega_x)^n.
    Solutions are returned in the order of ``t_list``; solves run in descending t with warm starts.
    """
    grid = chi.grid
    V0 = integrate(grid.field(1.0), chi)
    if V0 <= 0:
        raise ValueError(f"class of chi is not big: int chi^n = {V0:.6g} <= 0")
    ts = [float(t) for t in t_list]
    if any(not 0 < t <= 1 for t in ts):
        raise ValueError("every t must lie in (0, 1]")
    mass = integrate_array(grid, np.exp(F_spec.values), omega_x.det())
    F_t = GridField(grid, F_spec.values - np.log(mass))

    out = {}
    warm = None
    for t in sorted(set(ts), reverse=True):
        base = HermitianField(grid, chi.coeffs + t * omega_x.coeffs)
        V_t = integrate(grid.field(1.0), base)
        problem = MAProblem(base, omega_x, F_t, lam=0.0, normalization="sup_zero", scale=V_t)
        sol = solve_ma(problem, tol=tol, max_iter=max_iter, u0=warm)
        sol.t, sol.V_t, sol.F_t = t, V_t, F_t
        out[t] = sol
        warm = sol.u
    return [out[t] for t in ts]
