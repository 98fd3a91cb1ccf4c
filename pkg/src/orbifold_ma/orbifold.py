"""Flat Kahler orbifolds of global-quotient type (C^n / Z^{2n}) / G on a periodic grid.

A point of the grid is an integer index vector ``a`` in ``(Z/N)^{2n}`` with real
coordinates ``a / N`` ordered ``(x_1, y_1, ..., x_n, y_n)``, ``z_j = x_j + i y_j``.
Group elements are unitary matrices with entries in {0, +-1, +-i}; their
realifications are integer matrices and therefore permute grid points exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

GROUP_IDS = {"trivial": 0, "Z2": 1, "Z4": 2, "swap": 3}
_GROUP_ALIASES = {"Z4-diagonal": "Z4", "z4": "Z4", "z2": "Z2", "coordinate-swap": "swap"}


class GridError(ValueError):
    """Raised for incompatible grid / group specifications."""


def _realify(m: np.ndarray) -> np.ndarray:
    """Integer 2n x 2n matrix of z -> m z acting on (x_1, y_1, ..., x_n, y_n)."""
    n = m.shape[0]
    r = np.zeros((2 * n, 2 * n), dtype=np.int64)
    for j in range(n):
        for k in range(n):
            p, q = m[j, k].real, m[j, k].imag
            r[2 * j, 2 * k], r[2 * j, 2 * k + 1] = p, -q
            r[2 * j + 1, 2 * k], r[2 * j + 1, 2 * k + 1] = q, p
    return r


def _generator(name: str, n: int) -> np.ndarray:
    if name == "trivial":
        return np.eye(n, dtype=complex)
    if name == "Z2":
        return -np.eye(n, dtype=complex)
    if name == "Z4":
        return 1j * np.eye(n, dtype=complex)
    if name == "swap":
        if n != 2:
            raise GridError("coordinate swap is only defined for n = 2")
        return np.array([[0, 1], [1, 0]], dtype=complex)
    raise GridError(f"unknown group spec {name!r}; expected one of {sorted(GROUP_IDS)}")


@dataclass(eq=False)
class GroupAction:
    """Finite linear group acting on the grid, stored with one index permutation per element.

    ``perms[e][i]`` is the flat index of ``g_e . x_i``, so ``values.ravel()[perms[e]]``
    is the pullback ``f o g_e``.
    """

    name: str
    matrices: list[np.ndarray]
    perms: list[np.ndarray]

    @property
    def order(self) -> int:
        return len(self.matrices)

    @property
    def group_id(self) -> int:
        return GROUP_IDS[self.name]

    def compose_index(self, a: int, b: int) -> int:
        """Index of the element whose permutation equals ``perm_a o perm_b``."""
        target = self.perms[b][self.perms[a]]
        for e, p in enumerate(self.perms):
            if np.array_equal(p, target):
                return e
        raise GridError("group is not closed under composition")

    def multiplication_table(self) -> np.ndarray:
        k = self.order
        table = np.empty((k, k), dtype=np.int64)
        for a in range(k):
            for b in range(k):
                table[a, b] = self.compose_index(a, b)
        return table

    def check_axioms(self) -> None:
        """Verify closure, identity and inverses by enumeration."""
        size = self.perms[0].size
        ident = np.arange(size)
        if not any(np.array_equal(p, ident) for p in self.perms):
            raise GridError("group lacks the identity")
        table = self.multiplication_table()
        for a in range(self.order):
            if not any(np.array_equal(self.perms[table[a, b]], ident) for b in range(self.order)):
                raise GridError(f"element {a} has no inverse")
            if np.unique(self.perms[a]).size != size:
                raise GridError(f"element {a} is not a bijection of grid points")


@dataclass(eq=False)
class OrbifoldGrid:
    """Periodic grid on the unit-square-lattice torus with a finite group action."""

    n: int
    resolution: int
    group: GroupAction = field(repr=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.resolution,) * (2 * self.n)

    @property
    def size(self) -> int:
        return self.resolution ** (2 * self.n)

    @property
    def real_dim(self) -> int:
        return 2 * self.n

    @property
    def spacing(self) -> float:
        return 1.0 / self.resolution

    @cached_property
    def coords(self) -> list[np.ndarray]:
        """Real coordinate arrays ``[x_1, y_1, ..., x_n, y_n]`` (broadcastable, values in [0, 1))."""
        axes = []
        for ax in range(2 * self.n):
            shape = [1] * (2 * self.n)
            shape[ax] = self.resolution
            axes.append((np.arange(self.resolution) / self.resolution).reshape(shape))
        return axes

    @cached_property
    def wavenumbers(self) -> list[np.ndarray]:
        """Integer Fourier wavenumbers per real axis, broadcastable like ``coords``."""
        freqs = np.fft.fftfreq(self.resolution, d=1.0 / self.resolution)
        out = []
        for ax in range(2 * self.n):
            shape = [1] * (2 * self.n)
            shape[ax] = self.resolution
            out.append(freqs.reshape(shape))
        return out

    def zeros(self) -> "GridField":
        return GridField(self, np.zeros(self.shape))

    def field(self, values) -> "GridField":
        return GridField(self, np.broadcast_to(np.asarray(values, dtype=float), self.shape).copy())


def build_grid(n: int, resolution: int, group_spec: str = "trivial") -> OrbifoldGrid:
    """Build the grid for (C^n / Z^{2n}) / G.

    Parameters
    ----------
    n : complex dimension (>= 1)
    resolution : points per real axis; even, and divisible by the order of rotation groups
    group_spec : ``trivial``, ``Z2`` (z -> -z), ``Z4`` (z -> i z, diagonal for n >= 2)
        or ``swap`` ((z1, z2) -> (z2, z1), n = 2 only)
    """
    if n < 1:
        raise GridError("complex dimension must be >= 1")
    if resolution < 2 or resolution % 2:
        raise GridError(f"resolution must be even and >= 2, got {resolution}")
    name = _GROUP_ALIASES.get(group_spec, group_spec)
    gen = _generator(name, n)

    matrices = [np.eye(n, dtype=complex)]
    m = gen.copy()
    while not np.allclose(m, np.eye(n)):
        matrices.append(m)
        m = m @ gen
        if len(matrices) > 64:
            raise GridError("generator has infinite order")
    order = len(matrices)
    if name in ("Z2", "Z4") and resolution % order:
        raise GridError(f"resolution {resolution} is not divisible by rotation order {order}")

    shape = (resolution,) * (2 * n)
    idx = np.indices(shape).reshape(2 * n, -1)
    perms = []
    for mat in matrices:
        image = (_realify(mat) @ idx) % resolution
        perms.append(np.ravel_multi_index(tuple(image), shape))
    group = GroupAction(name, matrices, perms)
    group.check_axioms()
    return OrbifoldGrid(n, resolution, group)


@dataclass(eq=False)
class GridField:
    """Real scalar field on an :class:`OrbifoldGrid` (values shaped ``grid.shape``)."""

    grid: OrbifoldGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"field shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    def pullback(self, element: int) -> np.ndarray:
        return self.values.ravel()[self.grid.group.perms[element]].reshape(self.grid.shape)

    def invariance_defect(self) -> float:
        return max(float(np.max(np.abs(self.pullback(e) - self.values)))
                   for e in range(self.grid.group.order))

    def is_invariant(self, tol: float = 0.0) -> bool:
        return self.invariance_defect() <= tol

    def sup(self) -> float:
        return float(self.values.max())

    def with_values(self, values) -> "GridField":
        return GridField(self.grid, values)


def group_average(f: GridField) -> GridField:
    """Arithmetic mean of ``f o g`` over the group; exactly invariant and idempotent."""
    grid = f.grid
    flat = f.values.ravel()
    acc = np.zeros_like(flat)
    for p in grid.group.perms:
        acc += flat[p]
    return GridField(grid, (acc / grid.group.order).reshape(grid.shape))


def softplus(x, k: float) -> np.ndarray:
    """k^-1 log(1 + e^{k x}), evaluated without overflow."""
    kx = k * np.asarray(x, dtype=float)
    return (np.maximum(kx, 0.0) + np.log1p(np.exp(-np.abs(kx)))) / k


def eta_scalar(x, k: int) -> np.ndarray:
    """Smooth, positive majorant of max(0, x).

    Centred softplus approximates max(0, .) with sup error eps_k = log 2 / k and is exact at 0;
    adding eps_k + 1/k makes it strictly positive and convergent from above.
    """
    if k < 1:
        raise ValueError("smoothing index k must be >= 1")
    eps_k = math.log(2.0) / k
    centred = softplus(x, k) - eps_k
    return centred + (eps_k + 1.0 / k)


def eta_error_bound(k: int) -> float:
    """Uniform bound eps_k + 1/k on eta_k - max(0, .)."""
    return math.log(2.0) / k + 1.0 / k


def tau_scalar(x, k: int) -> np.ndarray:
    """tau_k(x) = k^-1 log(1 + e^{k x}) + 1/k >= x 1_{x>0} + 1/k, error <= (log 2 + 1)/k."""
    if k < 1:
        raise ValueError("smoothing index k must be >= 1")
    return softplus(x, k) + 1.0 / k


def smooth_max_cutoff(v: GridField, s: float, k: int) -> GridField:
    return v.with_values(eta_scalar(v.values - s, k))


def tau_cutoff(x: GridField, k: int) -> GridField:
    return x.with_values(tau_scalar(x.values, k))


def _bump_kernel(grid: OrbifoldGrid, k: float) -> np.ndarray:
    """Periodised k^{2n} rho(k y) with rho a C^infty bump supported in the unit ball, unit mass."""
    r2 = np.zeros(grid.shape)
    for c in grid.coords:
        d = np.minimum(c, 1.0 - c)
        r2 = r2 + d * d
    t = (k * k) * r2
    rho = np.where(t < 1.0, np.exp(-1.0 / np.maximum(1.0 - t, 1e-300)), 0.0)
    mass = rho.mean()
    if mass == 0.0:
        # support smaller than a cell: the discrete kernel degenerates to the identity
        rho = np.zeros(grid.shape)
        rho.flat[0] = 1.0
        mass = rho.mean()
    return rho / mass


def group_mollify(f: GridField, k: float) -> GridField:
    """Group-averaged convolution (1/|G|) sum_g (f * rho_k)(g x), mass-preserving (k^{2n} scaling)."""
    kern = _bump_kernel(f.grid, k)
    conv = np.fft.ifftn(np.fft.fftn(f.values) * np.fft.fftn(kern)).real / f.grid.size
    return group_average(f.with_values(conv))
