import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orbifold_ma import build_grid, calibrated_metric, green_kernel
from orbifold_ma.alpha import (BoundViolation, InadmissibleFunction, PshFamily,
                               admissibility_defect, avg_lower_bound_check, ball_exp_integral,
                               domination_constant, estimate_alpha, exp_integral, pencil_family,
                               project_psh, random_band_limited, random_family, smooth_pencil,
                               truncated_log, truncated_log_exp_integral)
from orbifold_ma.calculus import HermitianField, flat_form
from orbifold_ma.orbifold import GridField


@pytest.fixture(scope="module")
def g32():
    return build_grid(1, 32, "Z2")


@pytest.fixture(scope="module")
def fam(g32):
    return random_family(calibrated_metric(g32), 20, np.random.default_rng(7))


def test_exp_integral_zero_is_volume(g32):
    om = calibrated_metric(g32)
    for a in (0.0, 1.0, 5.0):
        assert math.isclose(exp_integral(g32.zeros(), a, om), 1.0, abs_tol=1e-12)


def test_exp_integral_rejects_positive(g32):
    with pytest.raises(InadmissibleFunction):
        exp_integral(g32.field(0.1), 1.0, calibrated_metric(g32))


def test_exp_integral_overflow_guard(g32):
    assert exp_integral(g32.field(-1.0), 1e4, calibrated_metric(g32)) == math.inf


def test_truncated_log_radial_closed_form():
    g = build_grid(1, 512, "Z2")
    phi = truncated_log(g, 0.5, 6.0)
    grid_val = exp_integral(GridField(g, phi.values - phi.values.max()), 1.0, calibrated_metric(g))
    grid_val *= math.exp(-phi.values.max())
    exact = truncated_log_exp_integral(0.5, 6.0, 1.0)
    assert abs(grid_val / exact - 1) <= 0.02


def test_monotone_in_alpha(g32, fam):
    om = calibrated_metric(g32)
    for phi in fam.members:
        assert exp_integral(phi, 0.5, om) <= exp_integral(phi, 1.0, om)
        assert exp_integral(phi, 0.5, om) >= 1.0 - 1e-12


def test_family_members_admissible(fam):
    for phi in fam.members:
        top, eig = admissibility_defect(phi, fam.metric)
        assert top == 0.0 and eig >= -1e-8


def test_family_rejects_inadmissible(g32):
    om = calibrated_metric(g32)
    x = g32.coords[0]
    bad = GridField(g32, -3 * np.cos(2 * math.pi * x) / math.pi ** 2 + 0 * g32.zeros().values)
    bad = GridField(g32, bad.values - bad.values.max())
    with pytest.raises(InadmissibleFunction):
        PshFamily(om, [bad])
    with pytest.raises(InadmissibleFunction):
        avg_lower_bound_check(bad, green_kernel(om))


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.floats(0.1, 20))
def test_project_psh_lands_in_class(seed, amp):
    g = build_grid(1, 16, "Z2")
    om = calibrated_metric(g)
    raw = amp * random_band_limited(g, np.random.default_rng(seed))
    phi = GridField(g, project_psh(raw, om))
    top, eig = admissibility_defect(phi, om)
    assert top == 0.0 and eig >= -1e-8


def test_avg_lower_bound_examples(g32, fam):
    om = calibrated_metric(g32)
    K = green_kernel(om)
    avg, bound = avg_lower_bound_check(g32.zeros(), K)
    assert avg == 0.0 and bound == -K.c1
    pencil = pencil_family(om, [1.0], 20.0).members[0]
    avg, bound = avg_lower_bound_check(pencil, K)
    assert avg >= bound
    for phi in fam.members:
        avg, bound = avg_lower_bound_check(phi, K)
        assert avg >= bound


def test_bound_violation_is_assertion_error():
    assert issubclass(BoundViolation, AssertionError)


def test_domination_constant_examples(g32):
    om = calibrated_metric(g32)
    assert math.isclose(domination_constant(om, om), 1.0, rel_tol=1e-14)
    assert math.isclose(domination_constant(HermitianField(g32, 2 * om.coeffs), om), 2.0,
                        rel_tol=1e-14)


def test_domination_constant_refinement():
    vals = []
    for res in (32, 64):
        g = build_grid(1, res)
        x, y = g.coords
        pot = -1.2 * np.cos(2 * math.pi * x) / math.pi ** 2 - 0.3 * np.cos(2 * math.pi * (x + y)) / (2 * math.pi ** 2)
        chi = flat_form(g, np.eye(1), pot + 0 * g.zeros().values)
        C = domination_constant(chi, calibrated_metric(g))
        assert np.all(chi.coeffs.real <= (C + 1e-12) * calibrated_metric(g).coeffs.real)
        vals.append(C)
    # both grids contain the maximiser x = y = 0
    assert abs(vals[0] - vals[1]) <= 1e-6


def test_domination_rejects_indefinite(g32):
    with pytest.raises(ValueError):
        domination_constant(calibrated_metric(g32), HermitianField(g32, -calibrated_metric(g32).coeffs))


def test_estimate_alpha_trivial_family(g32):
    om = calibrated_metric(g32)
    rep = estimate_alpha(PshFamily(om, [g32.zeros()]), om, 10.0, [0.5, 1, 2, 4])
    assert rep.alpha_star == 4.0


def test_pencil_alpha_tracks_smallest_threshold():
    g = build_grid(1, 64, "Z2")
    om = calibrated_metric(g)
    grid_a = [0.25 * i for i in range(1, 25)]
    fam = pencil_family(om, [0.25, 0.5, 1.0], 20.0)
    rep = estimate_alpha(fam, om, 10.0, grid_a)
    # the steepest member binds; alpha c <= 1 stays integrable for every member
    per_member = [max([a for a, v in zip(grid_a, row) if v <= 10.0], default=0.0)
                  for row in rep.integrals]
    assert rep.alpha_star == min(per_member) == per_member[2]
    assert rep.alpha_star >= 1.0


def test_adding_member_never_increases_alpha(g32, fam):
    om = calibrated_metric(g32)
    grid_a = [0.5 * i for i in range(1, 13)]
    small = PshFamily(om, fam.members[:5], fam.provenance[:5])
    a1 = estimate_alpha(small, om, 3.0, grid_a).alpha_star
    bigger = small.add(pencil_family(om, [1.0], 20.0).members[0], "pencil")
    a2 = estimate_alpha(bigger, om, 3.0, grid_a).alpha_star
    assert a2 <= a1


def test_integrals_nondecreasing(g32, fam):
    om = calibrated_metric(g32)
    rep = estimate_alpha(fam, om, 10.0, [0.5, 1.0, 2.0, 4.0])
    assert np.all(np.diff(rep.integrals, axis=1) >= -1e-12)


def test_truncation_depth_sequence_bounded():
    # e^{-lambda max(c log r, -M)} with lambda c < 2: monotone in M and bounded by the M -> inf limit
    c, lam = 0.5, 2.0
    vals = [truncated_log_exp_integral(c, M, lam) for M in (2.0, 4.0, 8.0, 16.0, 32.0)]
    limit = truncated_log_exp_integral(c, 200.0, lam)
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert vals[-1] <= limit * (1 + 1e-9)
    assert math.isfinite(limit)


def test_ball_integral_matches_inner_disc():
    g = build_grid(1, 256)
    om = calibrated_metric(g)
    phi = truncated_log(g, 0.5, 1.0)
    R = 0.25
    val = ball_exp_integral(phi, 1.0, om, R)
    r_cut = math.exp(-2.0)
    exact = math.e * math.pi * r_cut ** 2 + 2 * math.pi * (R ** 1.5 - r_cut ** 1.5) / 1.5
    assert abs(val / exact - 1) < 0.02


def test_smooth_pencil_is_group_invariant():
    g = build_grid(1, 32, "Z4")
    vals = smooth_pencil(g, 1.0, 10.0)
    assert GridField(g, vals).invariance_defect() < 1e-14
