"""Scalar estimates: entropy, level volumes, the epsilon root, the Fact inequality, DeGiorgi
constants and iteration checks, and the energy / Jensen chain."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.optimize import brentq

from .calculus import HermitianField, integrate_array
from .orbifold import GridField

MASS_TOL = 1e-8
C_PRIME_FLOOR = 1e-30


class NormalizationError(ValueError):
    pass


def _mass(F: GridField, metric: HermitianField) -> float:
    return integrate_array(F.grid, np.exp(F.values), metric.det())


def entropy(F: GridField, p: float, metric: HermitianField) -> float:
    """int |F|^p e^F metric^n for F normalised to unit mass."""
    mass = _mass(F, metric)
    if abs(mass - 1.0) > MASS_TOL:
        raise NormalizationError(f"int e^F = {mass!r}, expected 1")
    return integrate_array(F.grid, np.abs(F.values) ** p * np.exp(F.values), metric.det())


# -- level volumes ------------------------------------------------------------------------

@dataclass(eq=False)
class LevelVolume:
    """phi(s) = mass of {v > s}, s >= 0, for a discrete measure.

    ``values`` are sorted ascending with matching ``weights``; ``tail[i]`` is the mass of
    entries i, i+1, ..., so phi is evaluated exactly at any s.
    """

    values: np.ndarray
    weights: np.ndarray
    s_grid: np.ndarray
    samples: np.ndarray = field(init=False)
    tail: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        order = np.argsort(self.values, kind="stable")
        self.values = np.asarray(self.values, dtype=float)[order]
        self.weights = np.asarray(self.weights, dtype=float)[order]
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        self.tail = np.concatenate([np.cumsum(self.weights[::-1])[::-1], [0.0]])
        self.samples = self(self.s_grid)

    @classmethod
    def from_steps(cls, levels, masses, s_grid=None) -> "LevelVolume":
        """Measure with point masses ``masses`` at ``levels``."""
        levels = np.asarray(levels, dtype=float)
        if s_grid is None:
            s_grid = default_s_grid(float(levels.max()))
        return cls(levels, np.asarray(masses, dtype=float), np.asarray(s_grid, dtype=float))

    def __call__(self, s):
        idx = np.searchsorted(self.values, np.asarray(s, dtype=float), side="right")
        return self.tail[idx]

    @property
    def max_value(self) -> float:
        positive = self.weights > 0
        return float(self.values[positive].max()) if positive.any() else -math.inf

    def positive_levels(self) -> tuple[np.ndarray, np.ndarray]:
        """(u_j, M_j): distinct positive levels ascending and M_j = phi on [u_{j-1}, u_j), u_0 = 0."""
        keep = (self.values > 0) & (self.weights > 0)
        vals = self.values[keep]
        if vals.size == 0:
            return vals, vals
        levels = np.unique(vals)
        masses = self(np.concatenate([[0.0], levels[:-1]]))
        return levels, masses


def default_s_grid(vmax: float, count: int = 512) -> np.ndarray:
    """``count`` uniform samples on [0, max v] plus the exact max."""
    top = max(vmax, 0.0)
    return np.unique(np.concatenate([np.linspace(0.0, top, count), [top]]))


def level_volume(v: GridField, density: np.ndarray, s_grid=None) -> LevelVolume:
    """Level-volume function of v for the cell weights ``density`` (a nonnegative grid array
    of total mass 1, e.g. e^F det(omega) / (number of cells * |G|))."""
    density = np.asarray(density, dtype=float)
    if np.any(density < 0):
        raise ValueError("density must be nonnegative")
    total = float(density.sum())
    if abs(total - 1.0) > MASS_TOL:
        raise NormalizationError(f"density has mass {total!r}, expected 1")
    if s_grid is None:
        s_grid = default_s_grid(float(v.values.max()))
    return LevelVolume(v.values.ravel(), density.ravel(), np.asarray(s_grid, dtype=float))


def cell_weights(F: GridField, metric: HermitianField) -> np.ndarray:
    """Per-cell masses of e^F metric^n on the orbifold."""
    grid = F.grid
    return np.exp(F.values) * metric.det() / (grid.size * grid.group.order)


# -- epsilon root -----------------------------------------------------------------------

def _eps_coefficients(n: int, a: float) -> np.ndarray:
    """K_i = ((n+1)/n^2)^n binom(n, i) a^{n-i} n^i, i = 0..n (coefficients before the A factor)."""
    base = ((n + 1) / n ** 2) ** n
    return np.array([base * math.comb(n, i) * a ** (n - i) * n ** i for i in range(n + 1)])


def epsilon_polynomial(n: int, a: float, A: float, x):
    return np.asarray(x, dtype=float) ** (n + 1) - ((n + 1) / n ** 2) ** n * (a + n * np.asarray(x, dtype=float)) ** n * A


def lz_bound(n: int, a: float, A: float) -> float:
    """Lagrange-Zassenhaus bound 2 max_i (A K_i)^{1/(n-i+1)} on the positive root."""
    K = _eps_coefficients(n, a)
    return 2.0 * max((A * K[i]) ** (1.0 / (n - i + 1)) for i in range(n + 1))


def lz_constant(n: int, a: float, root_power_form: bool = False) -> float:
    """C(n, a) with eps <= C(n, a) A^{1/(n+1)} for 0 < A <= 2.

    With m = n - i + 1, A^{1/m} <= 2^{1/m - 1/(n+1)} A^{1/(n+1)}, so the factor outside the
    root is 2^{1/m - 1/(n+1)}, i.e. (2^{i/(n+1)} K_i)^{1/m} under it. ``root_power_form`` places
    2^{1/m - 1/(n+1)} itself under the root (smaller, and not a valid bound in general).
    """
    K = _eps_coefficients(n, a)
    terms = []
    for i in range(n + 1):
        m = n - i + 1
        power = (1.0 / m - 1.0 / (n + 1)) if root_power_form else i / (n + 1)
        terms.append((2.0 ** power * K[i]) ** (1.0 / m))
    return 2.0 * max(terms)


def epsilon_root(n: int, a: float, A: float) -> float:
    """Unique positive root of x^{n+1} = ((n+1)/n^2)^n (a + n x)^n A."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if a <= 0 or A <= 0:
        raise ValueError("a and A must be positive")
    hi = lz_bound(n, a, A)
    while epsilon_polynomial(n, a, A, hi) < 0:  # rounding guard; the bound is a theorem
        hi *= 2.0
    return brentq(lambda x: float(epsilon_polynomial(n, a, A, x)), 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                  maxiter=500)


# -- Fact inequality ------------------------------------------------------------------------

def fact_constant(p: float) -> float:
    """C(p) = (p/e)^p = sup_{f >= 0} f^p e^{-f}."""
    return (p / math.e) ** p


def fact_inequality_check(f: float, F: float, p: float) -> bool:
    """f^p e^F <= e^F (1 + |F|)^p + C(p) e^{2f}, compared in log space.

    The comparison allows 1e-12 in the logarithm, i.e. relative rounding of the two sides.
    """
    if p <= 0 or f < 0:
        raise ValueError("need p > 0 and f >= 0")
    if f == 0.0:
        return True
    lhs = p * math.log(f) + F
    rhs = np.logaddexp(F + p * math.log1p(abs(F)), p * (math.log(p) - 1.0) + 2.0 * f)
    return bool(lhs <= rhs + 1e-12)


def fact_violations(f: np.ndarray, F: np.ndarray, p: float) -> int:
    """Number of entries where the Fact inequality fails (array form of the scalar check)."""
    f = np.asarray(f, dtype=float)
    F = np.asarray(F, dtype=float)
    if p <= 0 or np.any(f < 0):
        raise ValueError("need p > 0 and f >= 0")
    pos = f > 0
    f, F = f[pos], F[pos]
    lhs = p * np.log(f) + F
    rhs = np.logaddexp(F + p * np.log1p(np.abs(F)), p * (math.log(p) - 1.0) + 2.0 * f)
    return int(np.count_nonzero(lhs > rhs + 1e-12))


# -- DeGiorgi -----------------------------------------------------------------------------

@dataclass(frozen=True)
class DeGiorgiParams:
    p: float | None
    n: int | None
    delta0: float
    C_prime: float
    s0: float
    C: float
    E_t: float | None = None


def degiorgi_constants(p: float | None, n: int | None, C_prime: float, E_t: float | None = None,
                       delta0: float | None = None) -> DeGiorgiParams:
    """delta0 = (p - n)/(n p), s0 = (2 C')^{1/delta0} (times E_t), C = s0 + 1/(1 - 2^{-delta0}).

    Passing ``delta0`` directly is a test mode for values no (p, n) pair produces.
    """
    if delta0 is None:
        if p is None or n is None or p <= n:
            raise ValueError("need p > n (delta0 <= 0 breaks the iteration)")
        delta0 = (p - n) / (n * p)
    if delta0 <= 0:
        raise ValueError("delta0 must be positive")
    if C_prime < 0:
        raise ValueError("C' must be nonnegative")
    if E_t is not None and E_t <= 0:
        raise ValueError("E_t must be positive")
    cp = max(C_prime, C_PRIME_FLOOR)
    s0 = (2.0 * cp) ** (1.0 / delta0)
    if E_t is not None:
        s0 *= E_t
    return DeGiorgiParams(p, n, delta0, cp, s0, s0 + 1.0 / (1.0 - 2.0 ** (-delta0)), E_t)


def exponent_identity(p, n) -> dict:
    """Hoelder closure exponents in exact rational arithmetic.

    q = p(n+1)/n is the Hoelder exponent on (v - s) and p' = q/(q-1) its dual; the closure
    requires (n+1)/(n p') = (pn + p - n)/(np) = 1 + delta0.
    """
    p, n = Fraction(p), Fraction(n)
    q = p * (n + 1) / n
    p_dual = q / (q - 1)
    lhs = (n + 1) / (n * p_dual)
    mid = (p * n + p - n) / (n * p)
    rhs = 1 + (p - n) / (n * p)
    return {"q": str(q), "p_dual": str(p_dual), "lhs": str(lhs), "middle": str(mid),
            "rhs": str(rhs), "holds": lhs == mid == rhs}


def c_prime_exact(lv: LevelVolume, delta0: float) -> float:
    """sup_{s, r >= 0} r phi(s + r) / phi(s)^{1+delta0} over phi(s) > 0, exact for step functions.

    With levels u_1 < ... < u_K, u_0 = 0, and phi = M_i on [u_{i-1}, u_i), the supremum is
    max_{i <= j} (u_j - u_{i-1}) M_j / M_i^{1+delta0}. For fixed j this is the upper envelope
    of lines x -> a_i x + b_i, a_i = M_i^{-1-delta0}, b_i = -u_{i-1} a_i, at x = u_j; slopes
    and queries both increase, so a monotone hull gives O(K).
    """
    levels, masses = lv.positive_levels()
    if levels.size == 0:
        return 0.0
    prev = np.concatenate([[0.0], levels[:-1]])
    slopes = masses ** (-1.0 - delta0)
    icpts = -prev * slopes
    hull: list[tuple[float, float]] = []
    ptr = 0
    best = 0.0

    def useless(l1, l2, l3):
        # l2 never strictly above max(l1, l3) once slopes are sorted
        return (l3[1] - l1[1]) * (l2[0] - l1[0]) >= (l2[1] - l1[1]) * (l3[0] - l1[0])

    for j in range(levels.size):
        line = (float(slopes[j]), float(icpts[j]))
        if hull and hull[-1][0] == line[0]:
            if hull[-1][1] >= line[1]:
                line = None
            else:
                hull.pop()
        if line is not None:
            while len(hull) >= 2 and useless(hull[-2], hull[-1], line):
                hull.pop()
            hull.append(line)
        ptr = min(ptr, len(hull) - 1)
        x = float(levels[j])
        while ptr + 1 < len(hull) and hull[ptr + 1][0] * x + hull[ptr + 1][1] >= hull[ptr][0] * x + hull[ptr][1]:
            ptr += 1
        val = (hull[ptr][0] * x + hull[ptr][1]) * float(masses[j])
        best = max(best, val)
    return best


def c_prime_brute(lv: LevelVolume, delta0: float) -> float:
    """O(K^2) reference for ``c_prime_exact``."""
    levels, masses = lv.positive_levels()
    best = 0.0
    for j in range(levels.size):
        for i in range(j + 1):
            low = levels[i - 1] if i > 0 else 0.0
            best = max(best, (levels[j] - low) * masses[j] / masses[i] ** (1.0 + delta0))
    return float(best)


def c_prime_grid(lv: LevelVolume, delta0: float) -> float:
    """sup of r phi(s + r) / phi(s)^{1+delta0} over pairs of sampled levels s <= s + r."""
    s = lv.s_grid
    ph = lv.samples
    S, T = np.meshgrid(s, s, indexing="ij")
    PS, PT = np.meshgrid(ph, ph, indexing="ij")
    ok = (T >= S) & (PS > 0)
    ratio = np.where(ok, (T - S) * PT / np.where(PS > 0, PS, 1.0) ** (1.0 + delta0), 0.0)
    return float(ratio.max()) if ratio.size else 0.0


@dataclass
class DeGiorgiReport:
    c_prime_emp: float
    c_prime_grid: float
    params: DeGiorgiParams
    max_value: float
    vanishes_beyond_C: bool
    sampled_vanishing: bool
    chain: list
    chain_ok: bool
    coverage: str

    @property
    def passed(self) -> bool:
        return self.vanishes_beyond_C and self.sampled_vanishing and self.chain_ok


def degiorgi_chain(lv: LevelVolume, params: DeGiorgiParams, max_m: int = 5000) -> list:
    """(m, s_m, bound, measured) for s_m = s0 + sum_{i<=m} 2^{-i delta0} until the bound underflows
    or s_m stops changing in floating point."""
    d = params.delta0
    rows = []
    s = params.s0
    log_c = math.log(params.C_prime)
    for m in range(max_m):
        s_next = s + 2.0 ** (-m * d)
        log_bound = -log_c / d - (m + 1 + 1.0 / d) * math.log(2.0)
        bound = math.exp(log_bound) if log_bound > -745.0 else 0.0
        rows.append((m, s_next, bound, float(lv(s_next))))
        if bound == 0.0 or s_next == s:
            break
        s = s_next
    return rows


def degiorgi_verify(lv: LevelVolume, params: DeGiorgiParams | None = None, p: float | None = None,
                    n: int | None = None, delta0: float | None = None,
                    E_t: float | None = None) -> DeGiorgiReport:
    """Measure C'_emp, recompute constants from it, and check vanishing beyond C and the chain.

    ``params`` supplies delta0 (and p, n, E_t) when given; C' is always replaced by C'_emp.
    """
    if params is not None:
        p, n, delta0, E_t = params.p, params.n, params.delta0, params.E_t
    if delta0 is None:
        delta0 = (p - n) / (n * p)
    emp = c_prime_exact(lv, delta0)
    grid_val = c_prime_grid(lv, delta0)
    newp = degiorgi_constants(p, n, emp, E_t=E_t, delta0=delta0)
    vmax = lv.max_value
    sampled = bool(np.all(lv.samples[lv.s_grid >= newp.C] == 0.0))
    chain = degiorgi_chain(lv, newp)
    chain_ok = all(meas <= bound for _, _, bound, meas in chain)
    coverage = (f"C' measured exactly over all s, r >= 0 for the step function of {lv.values.size} cells; "
                f"grid value over {lv.s_grid.size} sampled levels reported separately")
    return DeGiorgiReport(emp, grid_val, newp, vmax, bool(vmax <= newp.C), sampled, chain, chain_ok,
                          coverage)


# -- energy and Jensen ----------------------------------------------------------------------

@dataclass
class ChainLink:
    name: str
    lhs: float
    rhs: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return self.slack >= 0.0


def jensen_check(F: GridField, phi: GridField, alpha: float, metric: HermitianField) -> ChainLink:
    """int (-F - alpha phi) e^F <= log int e^{-alpha phi} for e^F metric^n a probability measure."""
    mass = _mass(F, metric)
    if abs(mass - 1.0) > MASS_TOL:
        raise NormalizationError(f"int e^F = {mass!r}, expected 1")
    grid, det = F.grid, metric.det()
    lhs = integrate_array(grid, (-F.values - alpha * phi.values) * np.exp(F.values), det)
    expo = -alpha * phi.values
    top = float(expo.max())
    rhs = top + math.log(integrate_array(grid, np.exp(expo - top), det))
    return ChainLink("jensen", lhs, rhs)


@dataclass
class EnergyReport:
    E_t: float
    entropy: float
    links: list
    ordering_defect: float
    ordering_ok: bool

    @property
    def passed(self) -> bool:
        return self.ordering_ok and all(link.holds for link in self.links)


def energy_bound_check(F: GridField, phi_t: GridField, V_t_env: GridField, p: float, alpha: float,
                       C_alpha: float, metric: HermitianField, order_tol: float = 1e-8) -> EnergyReport:
    """E_t = int (V - phi) e^F and the chain

    E_t <= int -phi e^F <= (1/alpha)(int F e^F + log int e^{-alpha phi}) <= (1/alpha)(int |F| e^F
    + log C_alpha) <= (1/alpha)(Ent_p^{1/p} + log C_alpha).
    """
    grid, det = F.grid, metric.det()
    ent = entropy(F, p, metric)
    eF = np.exp(F.values)
    defect = max(float(np.max(phi_t.values - V_t_env.values)), float(V_t_env.values.max()))
    E_t = integrate_array(grid, (V_t_env.values - phi_t.values) * eF, det)
    neg_phi = integrate_array(grid, -phi_t.values * eF, det)
    jensen = jensen_check(F, phi_t, alpha, metric)
    int_F = integrate_array(grid, F.values * eF, det)
    int_absF = integrate_array(grid, np.abs(F.values) * eF, det)
    links = [
        ChainLink("E_t <= int -phi e^F", E_t, neg_phi),
        jensen,
        ChainLink("log int e^{-alpha phi} <= log C_alpha", jensen.rhs, math.log(C_alpha)),
        ChainLink("int -phi e^F <= (int F e^F + log C_alpha)/alpha", neg_phi,
                  (int_F + math.log(C_alpha)) / alpha),
        ChainLink("int F e^F <= int |F| e^F", int_F, int_absF),
        ChainLink("int |F| e^F <= Ent_p^{1/p}", int_absF, ent ** (1.0 / p)),
        ChainLink("E_t <= (Ent_p^{1/p} + log C_alpha)/alpha", E_t,
                  (ent ** (1.0 / p) + math.log(C_alpha)) / alpha),
    ]
    return EnergyReport(E_t, ent, links, defect, defect <= order_tol)
