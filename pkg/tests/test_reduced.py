import numpy as np
import pytest
from hypothesis import given, strategies as st

from twoscale.dynamics import reduced_noise
from twoscale.errors import ConfigurationError, InvariantViolation
from twoscale.legendre import LegendreTable
from twoscale.model import linear_toy, one_mode_ergodic
from twoscale.reduced import (
    ReducedPolicy, dp_oracle, reduced_cost, solve_reduced, solve_reduced_deterministic, table_error,
)

ALPHA = np.linspace(-2, 2, 81)
X_GRID = np.linspace(-6, 6, 121)


def _replace(model, **changes):
    fields = {f: getattr(model, f) for f in model.__dataclass_fields__}
    fields.update(changes)
    return type(model)(**fields)


def _quadratic_problem(se=0.0):
    """Conjugate ``-alpha^2 / 2``, ``h = -x`` and no slow drift.

    The cost is ``-x0 + int (alpha + alpha^2 / 2) dt`` plus zero-mean noise,
    minimized by ``alpha = -1`` with value ``-x0 - 1/2``.
    """
    model = _replace(one_mode_ergodic(controlled=False), A_eigs=[0.0], h=lambda x: -x[:, 0])
    vals = np.tile(-0.5 * ALPHA**2, (X_GRID.size, 1))
    table = LegendreTable(X_GRID, ALPHA, vals, np.full_like(vals, se), {"alpha_radius": 2.0})
    return model, table


def test_deterministic_matches_closed_form():
    model, table = _quadratic_problem()
    det = solve_reduced_deterministic(model, table, n_starts=3)
    assert det.value == pytest.approx(-0.5, abs=1e-6)
    assert np.allclose(det.alpha, -1.0, atol=1e-3)
    assert det.table_stderr == 0.0


@pytest.mark.parametrize("eta", [0.0, 0.3])
def test_dp_matches_closed_form(eta):
    model, table = _quadratic_problem()
    assert dp_oracle(model, table, X_GRID, ALPHA, eta=eta) == pytest.approx(-0.5, abs=1e-9)


def test_stochastic_cannot_beat_optimum():
    model, table = _quadratic_problem()
    res = solve_reduced(model, table, 0.2, n_paths=400, n_rounds=6)
    assert res.value.mean >= -0.5 - 3 * res.value.stderr
    assert res.value.mean <= -0.5 + 0.05
    assert np.all(np.diff(res.history) <= 0)


def test_table_error_propagates():
    model, table = _quadratic_problem(se=0.01)
    noise = reduced_noise(model, 0.01, 20, 1)
    pol = ReducedPolicy(np.zeros((4, 3)), 1, radius=2.0)
    assert np.allclose(table_error(model, table, 0.1, pol, noise), 0.01)
    res = solve_reduced(model, table, 0.1, n_paths=200, n_rounds=1)
    assert res.value.details["table_stderr"] == pytest.approx(0.01)
    assert res.value.stderr >= 0.01


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0, 1))
def test_policy_stays_in_ball(c0, c1, t):
    pol = ReducedPolicy(np.tile([c0, c1, 0.0], (5, 1)), n_slow=3, active_mode=0, radius=2.0)
    x = np.linspace(-3, 3, 7)[:, None] * np.ones((1, 3))
    out = pol(t, x)
    assert np.all(np.linalg.norm(out, axis=1) <= 2.0 * (1 + 1e-12))
    assert np.all(out[:, 1:] == 0)


def test_policy_time_blocks():
    theta = np.zeros((4, 3))
    theta[:, 0] = [0.1, 0.2, 0.3, 0.4]
    pol = ReducedPolicy(theta, 1)
    got = [pol.active(t, np.zeros(1))[0] for t in (0.0, 0.26, 0.5, 0.99, 1.0)]
    assert got == [0.1, 0.2, 0.3, 0.4, 0.4]


def test_deterministic_requires_zero_slow_noise():
    _, table = _quadratic_problem()
    with pytest.raises(ConfigurationError):
        solve_reduced_deterministic(linear_toy(), table)


def test_dp_rejects_start_outside_grid():
    model, table = _quadratic_problem()
    with pytest.raises(ConfigurationError, match="outside"):
        dp_oracle(model, table, np.linspace(0.5, 1, 5), ALPHA)


def test_dp_rejects_alpha_outside_ball():
    model, table = _quadratic_problem()
    with pytest.raises(InvariantViolation):
        dp_oracle(model, table, X_GRID, np.linspace(-3, 3, 7))


def test_cost_outside_conjugate_domain_raises():
    # a table narrower than the control ball the dynamics clip to
    model, _ = _quadratic_problem()
    a = np.linspace(-1, 1, 5)
    table = LegendreTable(X_GRID, a, np.zeros((X_GRID.size, 5)), np.zeros((X_GRID.size, 5)), {})
    noise = reduced_noise(model, 0.01, 5, 1)
    pol = ReducedPolicy(np.tile([1.5, 0.0, 0.0], (2, 1)), 1, radius=2.0)
    with pytest.raises(InvariantViolation):
        reduced_cost(model, table, 0.0, pol, noise)
