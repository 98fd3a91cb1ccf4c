"""Spectral complex calculus on the periodic grid: i ddbar, determinants, Laplacians, Green kernels.

Conventions: a (1,1)-form is stored by its coefficient matrix h_{j kbar}; the volume
form omega^n is identified with det(h) times Lebesgue measure (the n! and powers of i
cancel in every ratio we use), and the Laplacian is Delta = tr_omega i ddbar.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .orbifold import GridField, OrbifoldGrid

PI2 = np.pi ** 2


@dataclass(eq=False)
class HermitianField:
    """n x n Hermitian coefficient matrix per grid point, ``coeffs.shape == grid.shape + (n, n)``."""

    grid: OrbifoldGrid
    coeffs: np.ndarray

    def __post_init__(self):
        n = self.grid.n
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != self.grid.shape + (n, n):
            raise ValueError(f"coefficient shape {self.coeffs.shape} does not match grid")

    @classmethod
    def constant(cls, grid: OrbifoldGrid, matrix) -> "HermitianField":
        m = np.asarray(matrix, dtype=complex).reshape(grid.n, grid.n)
        return cls(grid, np.broadcast_to(m, grid.shape + m.shape).copy())

    def __add__(self, other: "HermitianField") -> "HermitianField":
        return HermitianField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: "HermitianField") -> "HermitianField":
        return HermitianField(self.grid, self.coeffs - other.coeffs)

    def scaled(self, factor: float) -> "HermitianField":
        return HermitianField(self.grid, factor * self.coeffs)

    def det(self) -> np.ndarray:
        return hdet(self.coeffs)

    def min_eig(self) -> np.ndarray:
        return hmin_eig(self.coeffs)

    def hermitian_defect(self) -> float:
        return float(np.max(np.abs(self.coeffs - np.conj(np.swapaxes(self.coeffs, -1, -2)))))

    def is_constant(self, tol: float = 0.0) -> bool:
        flat = self.coeffs.reshape(-1, self.grid.n, self.grid.n)
        return float(np.max(np.abs(flat - flat[0]))) <= tol

    def pullback(self, element: int) -> np.ndarray:
        """Coefficients of g^* h: M^T h(g x) conj(M)."""
        grid = self.grid
        m = grid.group.matrices[element]
        flat = self.coeffs.reshape(-1, grid.n, grid.n)[grid.group.perms[element]]
        out = np.einsum("aj,pab,bk->pjk", m, flat, np.conj(m))
        return out.reshape(self.coeffs.shape)

    def equivariance_defect(self) -> float:
        return max(float(np.max(np.abs(self.pullback(e) - self.coeffs)))
                   for e in range(self.grid.group.order))


# -- batched small Hermitian matrices -------------------------------------------------

def hdet(h: np.ndarray) -> np.ndarray:
    n = h.shape[-1]
    if n == 1:
        return h[..., 0, 0].real.copy()
    if n == 2:
        return (h[..., 0, 0].real * h[..., 1, 1].real - np.abs(h[..., 0, 1]) ** 2)
    return np.linalg.det(h).real


def hmin_eig(h: np.ndarray) -> np.ndarray:
    n = h.shape[-1]
    if n == 1:
        return h[..., 0, 0].real.copy()
    if n == 2:
        a, d = h[..., 0, 0].real, h[..., 1, 1].real
        disc = np.sqrt((a - d) ** 2 + 4.0 * np.abs(h[..., 0, 1]) ** 2)
        return 0.5 * (a + d - disc)
    return np.linalg.eigvalsh(h)[..., 0]


def hadj(h: np.ndarray) -> np.ndarray:
    """Adjugate (det(h) h^{-1}), defined without inverting."""
    n = h.shape[-1]
    if n == 1:
        return np.ones_like(h)
    if n == 2:
        out = np.empty_like(h)
        out[..., 0, 0] = h[..., 1, 1]
        out[..., 1, 1] = h[..., 0, 0]
        out[..., 0, 1] = -h[..., 0, 1]
        out[..., 1, 0] = -h[..., 1, 0]
        return out
    return np.linalg.inv(h) * hdet(h)[..., None, None]


def hinv(h: np.ndarray) -> np.ndarray:
    n = h.shape[-1]
    if n <= 2:
        return hadj(h) / hdet(h)[..., None, None]
    return np.linalg.inv(h)


def htrace_prod(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """tr(a b) for batched matrices, real part."""
    return np.einsum("...jk,...kj->...", a, b).real


# -- spectral i ddbar -------------------------------------------------------------------

def _zeta(grid: OrbifoldGrid) -> list[np.ndarray]:
    k = grid.wavenumbers
    return [k[2 * j] + 1j * k[2 * j + 1] for j in range(grid.n)]


def _nyquist_free(grid: OrbifoldGrid, axes: list[int]) -> np.ndarray:
    nyq = -(grid.resolution // 2)
    mask = np.ones(grid.shape, dtype=bool)
    for ax in axes:
        mask &= grid.wavenumbers[ax] != nyq
    return mask


def ddbar_symbols(grid: OrbifoldGrid) -> dict[tuple[int, int], np.ndarray]:
    """Fourier multipliers of d^2/dz_j dzbar_k for j <= k (Nyquist removed off the diagonal)."""
    cache = grid.__dict__.setdefault("_ddbar_symbols", {})
    if cache:
        return cache
    zeta = _zeta(grid)
    for j in range(grid.n):
        for k in range(j, grid.n):
            sym = -PI2 * np.conj(zeta[j]) * zeta[k]
            if j == k:
                cache[(j, k)] = np.broadcast_to(sym.real, grid.shape).copy()
            else:
                mask = _nyquist_free(grid, [2 * j, 2 * j + 1, 2 * k, 2 * k + 1])
                cache[(j, k)] = np.where(mask, sym, 0.0)
    return cache


def ddbar_array(grid: OrbifoldGrid, values: np.ndarray) -> np.ndarray:
    """Coefficient array of i ddbar u for raw grid values."""
    n = grid.n
    if values.shape != grid.shape:
        raise ValueError(f"values shape {values.shape} does not match grid {grid.shape}")
    uh = np.fft.fftn(values)
    out = np.empty(grid.shape + (n, n), dtype=complex)
    for (j, k), sym in ddbar_symbols(grid).items():
        if j == k:
            out[..., j, j] = np.fft.ifftn(uh * sym).real
        else:
            entry = np.fft.ifftn(uh * sym)
            out[..., j, k] = entry
            out[..., k, j] = np.conj(entry)
    return out


def i_ddbar(u: GridField) -> HermitianField:
    return HermitianField(u.grid, ddbar_array(u.grid, u.values))


def ddbar_fd(u: GridField) -> HermitianField:
    """Second-order centred finite differences of d^2 u / dz_j dzbar_k (test oracle)."""
    grid, v, h = u.grid, u.values, u.grid.spacing
    n = grid.n

    def d2(a, b):
        if a == b:
            return (np.roll(v, -1, a) - 2 * v + np.roll(v, 1, a)) / h ** 2
        pp = np.roll(np.roll(v, -1, a), -1, b)
        mm = np.roll(np.roll(v, 1, a), 1, b)
        pm = np.roll(np.roll(v, -1, a), 1, b)
        mp = np.roll(np.roll(v, 1, a), -1, b)
        return (pp + mm - pm - mp) / (4 * h ** 2)

    out = np.empty(grid.shape + (n, n), dtype=complex)
    for j in range(n):
        xj, yj = 2 * j, 2 * j + 1
        for k in range(n):
            xk, yk = 2 * k, 2 * k + 1
            re = d2(xj, xk) + d2(yj, yk)
            im = d2(xj, yk) - d2(yj, xk)
            out[..., j, k] = 0.25 * (re + 1j * im)
    return HermitianField(grid, out)


def flat_form(grid: OrbifoldGrid, matrix, potential: np.ndarray | None = None) -> HermitianField:
    """Closed (1,1)-form ``matrix + i ddbar potential`` (every closed real (1,1)-form on a torus)."""
    form = HermitianField.constant(grid, matrix)
    if potential is not None:
        potential = np.broadcast_to(np.asarray(potential, dtype=float), grid.shape)
        form = HermitianField(grid, form.coeffs + ddbar_array(grid, potential))
    return form


def calibrated_metric(grid: OrbifoldGrid, scale: float = 1.0) -> HermitianField:
    """Flat metric c I with volume scale^n; c^n = |G| makes the orbifold volume 1 at scale 1."""
    c = scale * grid.group.order ** (1.0 / grid.n)
    return HermitianField.constant(grid, c * np.eye(grid.n))


def integrate_array(grid: OrbifoldGrid, f: np.ndarray, volume_det: np.ndarray | float) -> float:
    """Equal-weight quadrature of f det(volume) over the orbifold (torus mean / |G|)."""
    return float(np.mean(f * volume_det)) / grid.group.order


def integrate(f: GridField, volume: HermitianField) -> float:
    return integrate_array(f.grid, f.values, volume.det())


def ma_density(base: HermitianField, u: GridField, reference: HermitianField):
    """det(base + i ddbar u) / det(reference), and the mask where base + i ddbar u is not positive.

    Returns
    -------
    density : GridField
    bad : boolean array, True where the form fails positive-definiteness
    """
    ref_det = reference.det()
    if np.any(hmin_eig(reference.coeffs) <= 0):
        raise ValueError("reference form must be positive definite")
    a = base.coeffs + ddbar_array(u.grid, u.values)
    bad = hmin_eig(a) <= 0
    return GridField(u.grid, hdet(a) / ref_det), bad


def laplacian_array(metric: HermitianField, values: np.ndarray) -> np.ndarray:
    return htrace_prod(hinv(metric.coeffs), ddbar_array(metric.grid, values))


def laplacian(metric: HermitianField, u: GridField) -> GridField:
    """tr_metric(i ddbar u)."""
    if np.any(metric.min_eig() <= 0):
        raise ValueError("Laplacian needs a positive definite metric")
    return GridField(u.grid, laplacian_array(metric, u.values))


def laplacian_symbol(grid: OrbifoldGrid, inv_metric: np.ndarray) -> np.ndarray:
    """Fourier symbol of tr(G i ddbar) for a constant inverse metric G (real, <= 0)."""
    sym = np.zeros(grid.shape)
    for (j, k), s in ddbar_symbols(grid).items():
        if j == k:
            sym = sym + inv_metric[j, j].real * s
        else:
            sym = sym + 2.0 * (inv_metric[k, j] * s).real
    return sym


# -- Green kernel -----------------------------------------------------------------------

class UnsupportedMetric(ValueError):
    pass


@dataclass(eq=False)
class GreenKernel:
    """Green function of -Delta (zero mean mode) for a constant-coefficient metric.

    ``table[x]`` holds the torus kernel T(x - 0); the orbifold kernel is
    ``G(x, y) = sum_g T(x - g y) + shift`` with ``shift`` chosen so that inf G = 0.
    Green-Riesz: phi(x) = (1/V) int phi omega^n - int G(x, y) Delta phi(y) omega^n(y).
    """

    grid: OrbifoldGrid
    metric: HermitianField
    table: np.ndarray
    shift: float
    c1: float

    def row(self, y_index) -> np.ndarray:
        """G(., y) as a grid array, y given as a flat index or index tuple."""
        grid = self.grid
        if not np.isscalar(y_index):
            y_index = np.ravel_multi_index(tuple(y_index), grid.shape)
        idx = np.array(np.unravel_index(np.arange(grid.size), grid.shape))
        acc = np.zeros(grid.size)
        flat_table = self.table.ravel()
        for p in grid.group.perms:
            gy = np.array(np.unravel_index(p[y_index], grid.shape))
            diff = (idx - gy[:, None]) % grid.resolution
            acc += flat_table[np.ravel_multi_index(tuple(diff), grid.shape)]
        return (acc + self.shift).reshape(grid.shape)

    def apply(self, f: np.ndarray) -> np.ndarray:
        """x -> int G(x, y) f(y) omega^n(y)."""
        grid = self.grid
        det = float(self.metric.det().ravel()[0])
        conv = np.fft.ifftn(np.fft.fftn(self.table) * np.fft.fftn(f)).real
        return conv * det / grid.size + self.shift * integrate_array(grid, f, det)

    def reconstruct(self, phi: np.ndarray) -> np.ndarray:
        """Right-hand side of the Green-Riesz formula for phi."""
        det = float(self.metric.det().ravel()[0])
        vol = integrate_array(self.grid, np.ones(self.grid.shape), det)
        mean = integrate_array(self.grid, phi, det) / vol
        return mean - self.apply(laplacian_array(self.metric, phi))


def _kernel_infimum(grid: OrbifoldGrid, table: np.ndarray) -> float:
    """inf over (x, y) of sum_g T(x - g y)."""
    name = grid.group.name
    if name == "trivial":
        return float(table.min())
    if name == "Z2":
        # T(x - y) + T(x + y): (a, b) = (x - y, x + y) ranges over all pairs with a = b mod 2
        best = np.inf
        for cls in np.ndindex(*(2,) * grid.real_dim):
            sl = tuple(slice(c, None, 2) for c in cls)
            best = min(best, 2.0 * float(table[sl].min()))
        return best
    probe = GreenKernel(grid, None, table, 0.0, 0.0)
    seen = np.zeros(grid.size, dtype=bool)
    best = np.inf
    for y in range(grid.size):
        if seen[y]:
            continue
        for p in grid.group.perms:
            seen[p[y]] = True
        best = min(best, float(probe.row(y).min()))
    return best


def green_kernel(metric: HermitianField) -> GreenKernel:
    grid = metric.grid
    if not metric.is_constant(tol=1e-13):
        raise UnsupportedMetric("Green kernels are only implemented for constant-coefficient metrics")
    g = metric.coeffs.reshape(-1, grid.n, grid.n)[0]
    if np.linalg.eigvalsh(g)[0] <= 0:
        raise ValueError("metric must be positive definite")
    det = float(hdet(g[None])[0])
    sym = laplacian_symbol(grid, np.linalg.inv(g))
    mult = np.zeros(grid.shape)
    nz = sym != 0
    # (1/N^d) sum_y T(x - y) f(y) det = (-Delta)^{-1} f
    mult[nz] = grid.size / (det * (-sym[nz]))
    table = np.fft.ifftn(mult).real
    table = 0.5 * (table + np.roll(np.flip(table), 1, axis=tuple(range(grid.real_dim))))

    inf = _kernel_infimum(grid, table)
    shift = -inf
    vol = integrate_array(grid, np.ones(grid.shape), det)
    return GreenKernel(grid, metric, table, shift, shift * vol)


def kahler_witness(base: HermitianField) -> GridField:
    """Potential w with base + i ddbar w constant, for closed base = C + i ddbar f.

    Solved as w = -Delta_I^{-1}(tr base - mean tr base); when the class of base is positive the
    constant matrix (the mean of base) is positive definite and w is a Kahler witness.
    """
    grid = base.grid
    tr = np.einsum("...jj->...", base.coeffs).real
    sym = laplacian_symbol(grid, np.eye(grid.n))
    th = np.fft.fftn(tr - tr.mean())
    wh = np.zeros_like(th)
    nz = sym != 0
    wh[nz] = -th[nz] / sym[nz]
    return GridField(grid, np.fft.ifftn(wh).real)
