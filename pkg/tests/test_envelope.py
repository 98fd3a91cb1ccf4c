import math

import numpy as np
import pytest

from orbifold_ma import build_grid, calibrated_metric
from orbifold_ma.calculus import flat_form
from orbifold_ma.envelope import (EnvelopeProblem, complementarity_residual, convergence_report,
                                  envelope_beta, envelope_oracle_1d, envelope_solve)


def _theta(g, amp):
    x = g.coords[0]
    pot = -amp * np.cos(2 * math.pi * x) / math.pi ** 2 + 0 * g.zeros().values
    return flat_form(g, np.eye(1), pot)


@pytest.fixture(scope="module")
def grid():
    return build_grid(1, 32)


def test_kahler_theta_has_zero_envelope(grid):
    om = calibrated_metric(grid)
    prob = EnvelopeProblem(om, om, grid.field(1.0))
    u = envelope_beta(prob, 64.0)
    assert np.max(np.abs(u.values)) <= 1e-10
    assert np.all(envelope_oracle_1d(prob).values == 0)


def test_mixed_sign_negative_contact_region(grid):
    prob = EnvelopeProblem(_theta(grid, 2.0), calibrated_metric(grid), grid.field(1.0))
    u = envelope_beta(prob, 64.0)
    assert np.mean(u.values < 0) > 0.1


def test_sup_bound_max_principle(grid):
    prob = EnvelopeProblem(_theta(grid, 2.0), calibrated_metric(grid), grid.field(1.0))
    for beta in (16.0, 64.0, 256.0):
        sol = envelope_solve(prob, beta, tol=1e-9)
        assert sol.u_beta.sup() <= prob.sup_bound(beta) + 1e-9


def test_oracle_complementarity_and_bounds(grid):
    prob = EnvelopeProblem(_theta(grid, 2.0), calibrated_metric(grid), grid.field(1.0))
    env = envelope_oracle_1d(prob)
    assert complementarity_residual(prob, env) <= 1e-8
    assert env.values.max() <= 0
    phi = prob.phi_kahler.values
    assert np.all(env.values >= phi - phi.max() - 1e-10)


def test_oracle_monotone_in_theta(grid):
    om = calibrated_metric(grid)
    envs = [envelope_oracle_1d(EnvelopeProblem(_theta(grid, a), om, grid.field(1.0))).values
            for a in (3.0, 2.0, 1.5)]
    # smaller amplitude means pointwise larger theta on the negative region
    x = grid.coords[0]
    assert np.all(envs[0] <= envs[1] + 1e-10) and np.all(envs[1] <= envs[2] + 1e-10)
    del x


def test_convergence_report_mixed_sign(grid):
    prob = EnvelopeProblem(_theta(grid, 2.0), calibrated_metric(grid), grid.field(1.0))
    rep = convergence_report(prob, [16, 32, 64, 128, 256], tol=1e-9)
    assert rep.improves and rep.max_principle_ok
    assert math.isfinite(rep.fitted_C)
    assert rep.sup_errors[-1] < rep.sup_errors[0]


def test_convergence_report_validation(grid):
    om = calibrated_metric(grid)
    prob = EnvelopeProblem(om, om, grid.field(1.0))
    with pytest.raises(ValueError):
        convergence_report(prob, [16, 32, 64])
    with pytest.raises(ValueError):
        convergence_report(prob, [16, 64, 32, 128])


def test_validation_errors(grid):
    om = calibrated_metric(grid)
    with pytest.raises(ValueError):
        EnvelopeProblem(om, om, grid.field(-1.0))
    with pytest.raises(ValueError):
        envelope_solve(EnvelopeProblem(om, om, grid.field(1.0)), 0.5)
    g2 = build_grid(2, 4)
    om2 = calibrated_metric(g2)
    with pytest.raises(NotImplementedError):
        envelope_oracle_1d(EnvelopeProblem(om2, om2, g2.field(1.0)))
