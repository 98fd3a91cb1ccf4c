"""Run configuration: a flat TOML file of typed keys mapped onto ``RunConfig``.

Fields are built from trigonometric modes ``[amp, k_1, ..., k_2n]`` (integer wavevector over
the real axes x_1, y_1, ..., x_n, y_n):

* chi = chi_const * omega_X + i ddbar P with P = sum -amp / (pi^2 |k|^2) cos(2 pi k.x), so for
  n = 1 each mode adds amp * cos(2 pi k.x) to the coefficient of chi;
* omega_X is the calibrated flat metric plus i ddbar of a potential built the same way;
* F_spec = sum amp * cos(2 pi k.x), shifted to unit mass by the solver.

Every field is group averaged so the configured group acts by symmetries.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .calculus import HermitianField, calibrated_metric, flat_form
from .orbifold import GridField, OrbifoldGrid, build_grid, group_average


class ConfigError(ValueError):
    """Unknown key, wrong type or invalid value in a run configuration."""


@dataclass
class RunConfig:
    n: int = 1
    resolution: int = 128
    group: str = "Z2"
    chi_const: float = 0.5
    chi_modes: list = field(default_factory=lambda: [[2.4, 1, 0], [0.6, 0, 2]])
    omega_modes: list = field(default_factory=list)
    F_modes: list = field(default_factory=lambda: [[0.6, 0, 1], [0.3, 1, 1]])
    t_list: list = field(default_factory=lambda: [1.0, 0.5, 0.25, 0.125])
    p: float = 2.0
    beta_list: list = field(default_factory=lambda: [16.0, 32.0, 64.0, 128.0, 256.0, 512.0, 1024.0])
    cert_betas: list = field(default_factory=lambda: [64.0, 256.0, 1024.0])
    beta_max: float = 65536.0
    s_fractions: list = field(default_factory=lambda: [0.0, 0.5])
    k_list: list = field(default_factory=lambda: [8, 64])
    a: float = 1.0
    mv_t: float = 1.0
    v_samples: int = 50
    v_kmax: int = 3
    linfty_margin: float = 0.1
    alpha_grid: list = field(default_factory=lambda: [0.25 * i for i in range(1, 25)])
    C_target: float = 10.0
    random_members: int = 100
    pencil_cs: list = field(default_factory=lambda: [0.25, 0.5, 1.0])
    pencil_depth: float = 20.0
    level_count: int = 512
    tol: float = 1e-9
    max_iter: int = 100
    seed: int = 0
    out_dir: str = "out"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        for name in ("chi_modes", "omega_modes", "F_modes"):
            for mode in getattr(self, name):
                if len(mode) != 1 + 2 * self.n:
                    raise ConfigError(f"{name}: each mode is [amp, k_1, ..., k_{2 * self.n}]")
                if not any(mode[1:]):
                    raise ConfigError(f"{name}: zero wavevector")
        for name in ("t_list", "beta_list", "cert_betas", "s_fractions", "k_list", "alpha_grid"):
            if not getattr(self, name):
                raise ConfigError(f"{name} must be nonempty")
        if any(not 0 < t <= 1 for t in self.t_list) or not 0 < self.mv_t <= 1:
            raise ConfigError("t values must lie in (0, 1]")
        if self.p <= self.n:
            raise ConfigError("p must exceed n")
        if any(b < 1 for b in self.beta_list + self.cert_betas):
            raise ConfigError("beta values must be >= 1")
        if any(not 0 <= s < 1 for s in self.s_fractions):
            raise ConfigError("s_fractions must lie in [0, 1)")
        if any(int(k) != k or k < 1 for k in self.k_list):
            raise ConfigError("k_list entries must be positive integers")
        if self.a <= 0 or self.tol <= 0 or self.C_target <= 1:
            raise ConfigError("a and tol must be positive and C_target > 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, value):
    default = RunConfig.__dataclass_fields__[name]
    kind = default.type
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number")
        return float(value)
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string")
        return value
    if not isinstance(value, list):
        raise ConfigError(f"{name} must be an array")
    return value


def config_from_dict(data: dict) -> RunConfig:
    unknown = sorted(set(data) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return RunConfig(**{k: _coerce(k, v) for k, v in data.items()})


def load_config(path) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"config must be flat; found tables {nested}")
    return config_from_dict(data)


def dump_config(cfg: RunConfig) -> str:
    """Flat TOML text that ``load_config`` reads back to an equal config."""
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
        if isinstance(v, float):
            return repr(v)
        if isinstance(v, list):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        return str(v)
    return "".join(f"{k} = {fmt(v)}\n" for k, v in cfg.to_dict().items())


# -- field construction ----------------------------------------------------------------------

def _modes_sum(grid: OrbifoldGrid, modes, potential: bool) -> np.ndarray:
    out = np.zeros(grid.shape)
    for amp, *k in modes:
        phase = sum(kk * c for kk, c in zip(k, grid.coords))
        term = np.cos(2 * math.pi * phase)
        if potential:
            term = -term / (math.pi ** 2 * sum(kk * kk for kk in k))
        out = out + amp * term
    return group_average(GridField(grid, np.broadcast_to(out, grid.shape))).values


def make_grid(cfg: RunConfig) -> OrbifoldGrid:
    return build_grid(cfg.n, cfg.resolution, cfg.group)


def make_omega(cfg: RunConfig, grid: OrbifoldGrid) -> HermitianField:
    base = calibrated_metric(grid)
    if not cfg.omega_modes:
        return base
    form = flat_form(grid, base.coeffs.reshape(-1, grid.n, grid.n)[0],
                     _modes_sum(grid, cfg.omega_modes, True))
    if np.any(form.min_eig() <= 0):
        raise ConfigError("omega_modes make omega_X non-positive")
    return form


def make_chi(cfg: RunConfig, grid: OrbifoldGrid, omega: HermitianField) -> HermitianField:
    pot = _modes_sum(grid, cfg.chi_modes, True) if cfg.chi_modes else None
    flat = flat_form(grid, np.zeros((grid.n, grid.n)), pot)
    return HermitianField(grid, cfg.chi_const * omega.coeffs + flat.coeffs)


def make_F(cfg: RunConfig, grid: OrbifoldGrid) -> GridField:
    return GridField(grid, _modes_sum(grid, cfg.F_modes, False))
