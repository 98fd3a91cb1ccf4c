import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orbifold_ma import build_grid, calibrated_metric
from orbifold_ma.estimates import (LevelVolume, NormalizationError, c_prime_brute, c_prime_exact,
                                   cell_weights, degiorgi_chain, degiorgi_constants,
                                   degiorgi_verify, energy_bound_check, entropy, epsilon_polynomial,
                                   epsilon_root, exponent_identity, fact_constant,
                                   fact_inequality_check, fact_violations, jensen_check,
                                   level_volume, lz_bound, lz_constant)
from orbifold_ma.orbifold import GridField

GOLDEN = (1 + math.sqrt(5)) / 2


def _normalized(g, vals):
    om = calibrated_metric(g)
    w = cell_weights(GridField(g, vals), om).sum()
    return GridField(g, vals - math.log(w))


def test_entropy_examples():
    g = build_grid(1, 16)
    om = calibrated_metric(g)
    assert entropy(g.zeros(), 2.0, om) == 0.0
    vals = np.where(np.arange(16)[:, None] < 8, 0.5, -0.7) + 0 * g.zeros().values
    F = _normalized(g, vals)
    f1, f2 = float(F.values[0, 0]), float(F.values[-1, 0])
    hand = 0.5 * (abs(f1) ** 2 * math.exp(f1) + abs(f2) ** 2 * math.exp(f2))
    assert math.isclose(entropy(F, 2.0, om), hand, rel_tol=1e-12)
    with pytest.raises(NormalizationError):
        entropy(g.field(1.0), 2.0, om)


def test_level_volume_examples():
    g = build_grid(1, 32, "Z2")
    om = calibrated_metric(g)
    x = g.coords[0]
    v = GridField(g, np.sin(2 * math.pi * x) + np.sin(2 * math.pi * g.coords[1]) / 3 + 0 * g.zeros().values)
    lv = level_volume(v, cell_weights(g.zeros(), om), [-2.0, 0.0, float(v.values.max())])
    assert lv.samples[0] == pytest.approx(1.0, abs=1e-12)
    assert lv.samples[2] == 0.0
    # v(-x) = -v(x) under the measure-preserving involution
    assert abs(lv.samples[1] - 0.5) <= 1.0 / g.size + 1e-12


@settings(max_examples=25)
@given(st.integers(0, 1000))
def test_level_volume_monotone(seed):
    g = build_grid(1, 16)
    r = np.random.default_rng(seed)
    w = cell_weights(g.zeros(), calibrated_metric(g))
    v1 = r.standard_normal(g.shape)
    v2 = v1 + np.abs(r.standard_normal(g.shape))
    s = np.linspace(-3, 6, 50)
    p1 = level_volume(GridField(g, v1), w, s).samples
    p2 = level_volume(GridField(g, v2), w, s).samples
    assert np.all(p1 <= p2 + 1e-15)
    assert np.all(np.diff(p1) <= 0) and p1.min() >= 0 and p1.max() <= 1 + 1e-12


def test_epsilon_root_golden_ratio():
    assert abs(epsilon_root(1, 1.0, 0.5) - GOLDEN) <= 1e-12


def test_epsilon_root_n2():
    eps = epsilon_root(2, 1.0, 1.0)
    assert round(eps, 2) == 3.05
    assert abs(float(epsilon_polynomial(2, 1.0, 1.0, eps))) <= 1e-9


def test_epsilon_root_vanishes_with_A():
    vals = [epsilon_root(1, 1.0, A) for A in (1e-2, 1e-4, 1e-6)]
    assert vals[0] > vals[1] > vals[2] > 0


@settings(max_examples=100)
@given(st.integers(1, 4), st.floats(0.05, 5), st.floats(1e-4, 2), st.floats(1.01, 2))
def test_epsilon_root_increasing_and_bounded(n, a, A, factor):
    eps = epsilon_root(n, a, A)
    assert eps <= lz_bound(n, a, A) * (1 + 1e-12)
    assert eps <= lz_constant(n, a) * A ** (1 / (n + 1)) * (1 + 1e-12)
    assert epsilon_root(n, a, A * factor) > eps
    assert epsilon_root(n, a * factor, A) > eps


@pytest.mark.parametrize("args", [(1, 0.0, 1.0), (1, 1.0, 0.0), (1, -1.0, 1.0)])
def test_epsilon_root_rejects(args):
    with pytest.raises(ValueError):
        epsilon_root(*args)


def test_fact_examples():
    assert fact_inequality_check(0.0, 5.0, 2.0)
    assert fact_inequality_check(1.0, 2.0, 2.0)
    # the f <= F branch: e^2 <= 9 e^2 + C(2) e^2
    assert math.e ** 2 <= 9 * math.e ** 2 + fact_constant(2.0) * math.e ** 2
    assert math.isclose(fact_constant(2.0), 4 / math.e ** 2)


@given(st.floats(0, 50), st.floats(-50, 50), st.floats(1.1, 10))
def test_fact_never_fails(f, F, p):
    assert fact_inequality_check(f, F, p)


def test_fact_vectorised_matches_scalar():
    r = np.random.default_rng(0)
    f, F = r.uniform(0, 50, 2000), r.uniform(-50, 50, 2000)
    assert fact_violations(f, F, 3.0) == sum(not fact_inequality_check(a, b, 3.0) for a, b in zip(f, F))


def test_fact_constant_is_minimal():
    # C(p) = sup f^p e^{-f}, attained at f = p
    for p in (1.5, 2.0, 7.0):
        fs = np.linspace(0, 60, 200001)
        assert math.isclose(np.max(fs ** p * np.exp(-fs)), fact_constant(p), rel_tol=1e-8)


def test_degiorgi_constants_examples():
    a = degiorgi_constants(None, None, 0.5, delta0=1.0)
    assert (a.s0, a.C) == (1.0, 3.0)
    b = degiorgi_constants(None, None, 1.0, delta0=1.0)
    assert (b.s0, b.C) == (2.0, 4.0)
    assert degiorgi_constants(2.0, 1, 1.0).delta0 == 0.5
    e = degiorgi_constants(2.0, 1, 1.0, E_t=3.0)
    assert math.isclose(e.s0, 3.0 * 4.0)
    with pytest.raises(ValueError):
        degiorgi_constants(1.0, 1, 1.0)


def test_degiorgi_zero_phi_passes():
    lv = LevelVolume.from_steps([0.0], [1.0], np.linspace(0, 1, 11))
    rep = degiorgi_verify(lv, delta0=1.0)
    assert rep.c_prime_emp == 0.0 and rep.passed


def test_degiorgi_step_case():
    lv = LevelVolume.from_steps([1.0], [1.0], np.linspace(0, 8, 801))
    rep = degiorgi_verify(lv, delta0=1.0)
    assert rep.c_prime_emp <= 1.0 + 1e-12
    fixed = degiorgi_constants(None, None, 1.0, delta0=1.0)
    assert (fixed.s0, fixed.C) == (2.0, 4.0)
    assert rep.max_value <= fixed.C and rep.passed
    for _, _, bound, measured in degiorgi_chain(lv, fixed):
        assert measured <= bound


@settings(max_examples=40)
@given(st.lists(st.tuples(st.floats(0.01, 5), st.floats(0.01, 1)), min_size=1, max_size=12),
       st.floats(0.1, 2))
def test_c_prime_exact_matches_brute(steps, delta0):
    levels, masses = zip(*steps)
    lv = LevelVolume.from_steps(levels, masses)
    assert math.isclose(c_prime_exact(lv, delta0), c_prime_brute(lv, delta0), rel_tol=1e-12)


@settings(max_examples=40)
@given(st.integers(0, 10_000))
def test_degiorgi_vanishes_beyond_measured_constant(seed):
    g = build_grid(1, 16)
    r = np.random.default_rng(seed)
    v = GridField(g, np.abs(r.standard_normal(g.shape)) * r.uniform(0.1, 5))
    lv = level_volume(v, cell_weights(g.zeros(), calibrated_metric(g)))
    rep = degiorgi_verify(lv, p=2.0, n=1)
    assert rep.vanishes_beyond_C and rep.sampled_vanishing


def test_exponent_identity_exact():
    for p, n in [(2, 1), (Fraction(7, 2), 2), (5, 3)]:
        out = exponent_identity(p, n)
        assert out["holds"]
    assert exponent_identity(2, 1)["rhs"] == "3/2"


def test_energy_trivial():
    g = build_grid(1, 16)
    om = calibrated_metric(g)
    rep = energy_bound_check(g.zeros(), g.zeros(), g.zeros(), 2.0, 1.0, 2.0, om)
    assert rep.E_t == 0.0 and rep.passed


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.floats(0.1, 5))
def test_jensen_random(seed, alpha):
    g = build_grid(1, 16)
    r = np.random.default_rng(seed)
    F = _normalized(g, r.standard_normal(g.shape))
    phi = GridField(g, -np.abs(r.standard_normal(g.shape)))
    assert jensen_check(F, phi, alpha, calibrated_metric(g)).holds


def test_energy_ordering_violation_reported():
    g = build_grid(1, 16)
    om = calibrated_metric(g)
    rep = energy_bound_check(g.zeros(), g.zeros(), g.field(-0.5), 2.0, 1.0, 2.0, om)
    assert not rep.ordering_ok and not rep.passed


def test_lz_constant_forms():
    # the bound on the LZ bound needs the 2^{i/(n+1)} factor under the root at A = 2
    n, a, A = 2, 10.0, 2.0
    assert lz_bound(n, a, A) <= lz_constant(n, a) * A ** (1 / (n + 1)) * (1 + 1e-12)
    assert lz_bound(n, a, A) > lz_constant(n, a, root_power_form=True) * A ** (1 / (n + 1))
