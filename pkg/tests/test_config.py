import math

import numpy as np
import pytest

from orbifold_ma.config import (ConfigError, RunConfig, config_from_dict, dump_config,
                                load_config, make_chi, make_F, make_grid, make_omega)


def test_defaults_valid():
    cfg = RunConfig()
    assert cfg.n == 1 and cfg.group == "Z2" and cfg.tol > 0


def test_round_trip(tmp_path):
    cfg = RunConfig(resolution=64, seed=7, t_list=[1.0, 0.3], chi_modes=[[1.5, 2, 1]])
    path = tmp_path / "c.toml"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        config_from_dict({"resoluton": 64})
    path = tmp_path / "c.toml"
    path.write_text("[table]\nx = 1\n")
    with pytest.raises(ConfigError):
        load_config(path)
    path.write_text("n = = 1\n")
    with pytest.raises(ConfigError):
        load_config(path)


@pytest.mark.parametrize("data", [{"n": "1"}, {"tol": True}, {"group": 3}, {"t_list": 1.0}])
def test_type_errors(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


@pytest.mark.parametrize("kwargs", [dict(t_list=[]), dict(t_list=[0.0]), dict(p=1.0),
                                    dict(beta_list=[0.5]), dict(s_fractions=[1.0]),
                                    dict(k_list=[0]), dict(a=0.0), dict(C_target=1.0),
                                    dict(chi_modes=[[1.0, 0, 0]]), dict(F_modes=[[1.0, 1]])])
def test_validation(kwargs):
    with pytest.raises(ConfigError):
        RunConfig(**kwargs)


def test_integer_float_coercion():
    assert config_from_dict({"a": 2}).a == 2.0


def test_field_builders():
    cfg = RunConfig(resolution=32)
    g = make_grid(cfg)
    om = make_omega(cfg, g)
    chi = make_chi(cfg, g, om)
    F = make_F(cfg, g)
    assert om.is_constant() and math.isclose(float(om.coeffs[0, 0, 0, 0].real), 2.0)
    # chi coefficient = 0.5 * 2 + 2.4 cos(2 pi x) + 0.6 cos(4 pi y), min -2 at x = 1/2, y = 1/4
    x, y = g.coords
    expected = 1.0 + 2.4 * np.cos(2 * math.pi * x) + 0.6 * np.cos(4 * math.pi * y)
    np.testing.assert_allclose(chi.coeffs[..., 0, 0].real, expected + 0 * F.values, atol=1e-10)
    assert F.invariance_defect() < 1e-14 and chi.equivariance_defect() < 1e-10


def test_omega_modes_positive_check():
    cfg = RunConfig(resolution=16, omega_modes=[[50.0, 1, 0]])
    with pytest.raises(ConfigError):
        make_omega(cfg, make_grid(cfg))
    ok = RunConfig(resolution=16, omega_modes=[[0.5, 1, 0]])
    assert not make_omega(ok, make_grid(ok)).is_constant()
