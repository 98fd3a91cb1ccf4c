"""Exponential integrals of omega-psh functions, the Green-kernel average bound, domination
constants and family-relative alpha estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate as quad_integrate

from .calculus import GreenKernel, HermitianField, ddbar_array, hmin_eig, integrate_array
from .orbifold import GridField, OrbifoldGrid, group_average

ADMISSIBLE_TOL = 1e-8


class InadmissibleFunction(ValueError):
    """Input is not a normalised omega-psh function."""


class BoundViolation(AssertionError):
    """A theorem-backed inequality failed on admissible input (a discretisation bug)."""


def log_exp_integral(phi: GridField, alpha: float, metric: HermitianField) -> float:
    """log int e^{-alpha phi} metric^n, in log-sum-exp form."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if phi.values.max() > 1e-10:
        raise InadmissibleFunction(f"phi must be <= 0, sup = {phi.values.max():.3e}")
    expo = -alpha * phi.values
    top = float(expo.max())
    grid = phi.grid
    return top + math.log(integrate_array(grid, np.exp(expo - top), metric.det()))


def exp_integral(phi: GridField, alpha: float, metric: HermitianField) -> float:
    """int e^{-alpha phi} metric^n (inf on overflow)."""
    val = log_exp_integral(phi, alpha, metric)
    return math.exp(val) if val < 709.0 else math.inf


def ball_exp_integral(phi: GridField, alpha: float, metric: HermitianField, radius: float) -> float:
    """int over the flat ball {|z| < radius} around the origin of e^{-alpha phi} metric^n."""
    grid = phi.grid
    r2 = np.zeros(grid.shape)
    for c in grid.coords:
        d = np.minimum(c, 1.0 - c)
        r2 = r2 + d * d
    mask = r2 < radius * radius
    return integrate_array(grid, np.where(mask, np.exp(-alpha * phi.values), 0.0), metric.det())


# -- generators -------------------------------------------------------------------------

def flat_radius(grid: OrbifoldGrid) -> np.ndarray:
    """Distance to the lattice point nearest the origin (minimum image)."""
    r2 = np.zeros(grid.shape)
    for c in grid.coords:
        d = np.minimum(c, 1.0 - c)
        r2 = r2 + d * d
    return np.sqrt(r2)


def truncated_log(grid: OrbifoldGrid, c: float, M: float) -> GridField:
    """Group average of max(c log r, -M) with r the flat distance to the origin.

    Not psh across the cut locus of the torus; it is the closed-form test function for
    exponential integrals (see ``truncated_log_exp_integral``).
    """
    with np.errstate(divide="ignore"):
        vals = np.maximum(c * np.log(flat_radius(grid)), -M)
    return group_average(GridField(grid, vals))


def _circle_length_in_cell(r: float) -> float:
    """Length of {|z| = r} within the unit cell [-1/2, 1/2]^2."""
    if r <= 0.5:
        return 2 * math.pi * r
    if r >= math.sqrt(0.5):
        return 0.0
    return 2 * math.pi * r - 8 * r * math.acos(0.5 / r)


def truncated_log_exp_integral(c: float, M: float, alpha: float, volume_scale: float = 1.0) -> float:
    """Radial closed form of int_T e^{-alpha max(c log r, -M)} dA for n = 1 (unit torus)."""
    r_cut = math.exp(-M / c)
    inner = math.exp(alpha * M) * math.pi * r_cut ** 2

    def integrand(r):
        return r ** (-alpha * c) * _circle_length_in_cell(r)

    mid, _ = quad_integrate.quad(integrand, r_cut, 0.5, limit=200)
    outer, _ = quad_integrate.quad(integrand, 0.5, math.sqrt(0.5), limit=200)
    return volume_scale * (inner + mid + outer)


def project_psh(values: np.ndarray, metric: HermitianField, tol: float = ADMISSIBLE_TOL) -> np.ndarray:
    """Scale toward 0 until metric + i ddbar(s values) >= -tol / 2, then shift to sup 0.

    Half the tolerance is kept in reserve for rounding in later re-evaluations.
    """
    grid = metric.grid
    tol = 0.5 * tol
    H = ddbar_array(grid, values)

    def ok(s):
        return float(hmin_eig(metric.coeffs + s * H).min()) >= -tol

    s = 1.0
    if not ok(1.0):
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if ok(mid) else (lo, mid)
        s = lo
    out = s * values
    return out - out.max()


def smooth_pencil(grid: OrbifoldGrid, c: float, M: float) -> np.ndarray:
    """(c/2) log(rho^2 + eps^2), rho^2 = sum_j (sin^2 pi x_j + sin^2 pi y_j) / pi^2.

    A smooth periodic stand-in for max(c log |z|, -M), invariant under every supported group.
    eps = max(e^{-M/c}, 2h): below two cells the spectral i ddbar of the spike rings and the
    member is no longer resolvable, so the effective depth is capped by the grid.
    """
    eps = max(math.exp(-M / c), 2.0 * grid.spacing)
    rho2 = sum(np.sin(np.pi * x) ** 2 for x in grid.coords) / np.pi ** 2
    return 0.5 * c * np.log(rho2 + eps * eps)


def random_band_limited(grid: OrbifoldGrid, rng: np.random.Generator, kmax: int = 4,
                        decay: float = 2.0) -> np.ndarray:
    """Real random trigonometric field with modes |k|_inf <= kmax and |k|^-decay amplitudes."""
    coef = np.zeros(grid.shape, dtype=complex)
    k = grid.wavenumbers
    kabs = np.zeros(grid.shape)
    band = np.ones(grid.shape, dtype=bool)
    for kk in k:
        kabs = kabs + kk * kk
        band &= np.abs(kk) <= kmax
    band &= kabs > 0
    noise = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    coef[band] = noise[band] / (1.0 + kabs[band]) ** (decay / 2)
    vals = np.fft.ifftn(coef).real
    return vals / max(float(np.abs(vals).max()), 1e-300)


def admissibility_defect(phi: GridField, metric: HermitianField) -> tuple[float, float]:
    """(sup phi, min eigenvalue of metric + i ddbar phi)."""
    A = metric.coeffs + ddbar_array(phi.grid, phi.values)
    return float(phi.values.max()), float(hmin_eig(A).min())


@dataclass(eq=False)
class PshFamily:
    metric: HermitianField
    members: list = field(default_factory=list)
    provenance: list = field(default_factory=list)

    def __post_init__(self):
        for m in self.members:
            self._check(m)

    def _check(self, phi: GridField):
        top, eig = admissibility_defect(phi, self.metric)
        if top != 0.0 or eig < -ADMISSIBLE_TOL:
            raise InadmissibleFunction(f"sup {top:.3e}, min eigenvalue {eig:.3e}")

    def add(self, phi: GridField, label: str) -> "PshFamily":
        self._check(phi)
        return PshFamily(self.metric, self.members + [phi], self.provenance + [label])

    def __len__(self):
        return len(self.members)


def pencil_family(metric: HermitianField, cs, M: float) -> PshFamily:
    grid = metric.grid
    members, labels = [], []
    for c in cs:
        vals = group_average(GridField(grid, smooth_pencil(grid, c, M))).values
        members.append(GridField(grid, project_psh(vals, metric)))
        labels.append(f"pencil(c={c:g}, M={M:g})")
    return PshFamily(metric, members, labels)


def random_family(metric: HermitianField, count: int, rng: np.random.Generator,
                  kmax: int = 4, amplitude: tuple = (0.05, 1.0)) -> PshFamily:
    """Random band-limited fields, group averaged, projected into P(omega) and sup-shifted."""
    grid = metric.grid
    members, labels = [], []
    for i in range(count):
        amp = rng.uniform(*amplitude)
        raw = group_average(GridField(grid, amp * random_band_limited(grid, rng, kmax))).values
        members.append(GridField(grid, project_psh(raw, metric)))
        labels.append(f"random[{i}]")
    return PshFamily(metric, members, labels)


# -- bounds -------------------------------------------------------------------------------

def avg_lower_bound_check(phi: GridField, kernel: GreenKernel) -> tuple[float, float]:
    """((1/V) int phi omega^n, -n c1); raises BoundViolation if the average is below the bound.

    The admissibility floor -ADMISSIBLE_TOL on eigenvalues is carried into the bound.
    """
    metric = kernel.metric
    top, eig = admissibility_defect(phi, metric)
    if top != 0.0 or eig < -ADMISSIBLE_TOL:
        raise InadmissibleFunction(f"sup {top:.3e}, min eigenvalue {eig:.3e}")
    grid = phi.grid
    det = metric.det()
    vol = integrate_array(grid, np.ones(grid.shape), det)
    avg = integrate_array(grid, phi.values, det) / vol
    bound = -grid.n * kernel.c1
    g_min = float(np.linalg.eigvalsh(metric.coeffs.reshape(-1, grid.n, grid.n)[0]).min())
    slack = grid.n * ADMISSIBLE_TOL / g_min * kernel.c1 + 1e-12
    if avg < bound - slack:
        raise BoundViolation(f"average {avg:.6g} below -n c1 = {bound:.6g}")
    return avg, bound


def domination_constant(chi: HermitianField, omega: HermitianField) -> float:
    """Smallest C with chi <= C omega pointwise (largest generalised eigenvalue over the grid)."""
    n = chi.grid.n
    W = omega.coeffs.reshape(-1, n, n)
    if np.any(np.linalg.eigvalsh(W)[:, 0] <= 0):
        raise ValueError("omega must be positive definite")
    L = np.linalg.cholesky(W)
    Linv = np.linalg.inv(L)
    X = chi.coeffs.reshape(-1, n, n)
    S = Linv @ X @ np.conj(np.swapaxes(Linv, -1, -2))
    return float(np.linalg.eigvalsh(S)[:, -1].max())


@dataclass(eq=False)
class AlphaReport:
    alpha_grid: list
    integrals: np.ndarray
    alpha_star: float
    C_target: float
    labels: list
    c1: float | None = None
    c2: float | None = None


def estimate_alpha(family: PshFamily, metric: HermitianField, C_target: float, alpha_grid,
                   c1: float | None = None, c2: float | None = None) -> AlphaReport:
    """Largest grid alpha with every member integral <= C_target (family-relative surrogate)."""
    alphas = sorted(float(a) for a in alpha_grid)
    if not alphas or len(family) == 0:
        raise ValueError("need a nonempty family and alpha grid")
    mat = np.array([[exp_integral(phi, a, metric) for a in alphas] for phi in family.members])
    good = np.all(mat <= C_target, axis=0)
    star = 0.0
    for a, g in zip(alphas, good):
        if not g:
            break
        star = a
    return AlphaReport(alphas, mat, star, C_target, list(family.provenance), c1, c2)
