import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from twoscale.ergodic import LambdaTable
from twoscale.errors import ConfigurationError, OutOfRangeError
from twoscale.estimates import ValueEstimate
from twoscale.legendre import (
    NEG_INF, LegendreTable, TruncationParams, build_legendre_table, choose_kappa, containment_fraction,
    fenchel_recover, legendre_property_audit, legendre_star, round_trip_error, tilde_lambda,
)
from twoscale.model import linear_toy

P10 = TruncationParams(M=1.0, kappa=10.0, a=1.5)


def const(c):
    return lambda x, z: np.full(np.shape(z), c)


def test_cap_inactive_at_zero():
    assert tilde_lambda(const(0.5), P10, 0.0, 0.0) == 0.5


@pytest.mark.parametrize("z", [12.0, -12.0, 11.0])
def test_cap_region(z):
    def fail(x, z):
        raise AssertionError("lambda must not be evaluated in the cap region")
    assert tilde_lambda(fail, P10, 0.0, z) == 10 - 2 * abs(z)


@given(z=st.floats(-3, 3))
def test_identity_region(z):
    lam = lambda x, z: 0.3 + 0.8 * np.tanh(z)
    assert tilde_lambda(lam, P10, 0.0, z) == lam(0.0, z)


def test_tilde_out_of_table_range():
    tab = LambdaTable(np.array([0.0, 1.0]), np.array([-2.0, 2.0]), np.zeros((2, 2)), np.zeros((2, 2)), {})
    with pytest.raises(OutOfRangeError):
        tilde_lambda(tab, P10, 0.5, np.array([5.0]))


@pytest.mark.parametrize("kwargs", [dict(M=1.0, kappa=0.5, a=0.1), dict(M=1.0, kappa=4.0, a=1.5)])
def test_truncation_invariants(kwargs):
    with pytest.raises(ConfigurationError):
        TruncationParams(**kwargs)


def test_star_flat_top():
    tilde = lambda x, z: np.minimum(0.5, 10 - 2 * np.abs(z))
    assert legendre_star(tilde, 0.0, 0.0, 11.0, M=1.0) == pytest.approx(-0.5)


@pytest.mark.parametrize("alpha", [2.1, -2.1, 5.0])
def test_star_outside_ball(alpha):
    assert legendre_star(const(0.0), 0.3, alpha, 11.0, M=1.0) == NEG_INF


def test_star_negative_abs():
    assert legendre_star(lambda x, z: -np.abs(z), 0.0, 0.5, 4.0, M=0.0) == pytest.approx(0.0, abs=1e-12)


def test_star_boundary_minimum_doubles_then_fails():
    # slope 3 exceeds the ball radius, so the minimum always sits on the boundary
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        with pytest.raises(ConfigurationError):
            legendre_star(lambda x, z: 3 * z, 0.0, 1.0, 4.0, M=1.0)
    assert len(rec) == 3


def _table_from(fn, params, nx=3, nz=101):
    xg = np.linspace(-1, 1, nx)
    zg = np.linspace(-params.cap_radius, params.cap_radius, nz)
    X, Z = np.meshgrid(xg, zg, indexing="ij")
    return LambdaTable(xg, zg, fn(X, Z), np.zeros_like(X), {})


def test_constant_round_trip_exact():
    params = TruncationParams(M=1.0, kappa=1.6, a=0.1)
    lam = _table_from(lambda x, z: np.full_like(z, 0.4), params)
    leg = build_legendre_table(lam, params, n_alpha=401, n_z=201)
    err, excess, _ = round_trip_error(leg, lam, params)
    assert err < 1e-12


def test_table_star_finite_exactly_on_ball():
    params = TruncationParams(M=1.0, kappa=1.6, a=0.1)
    lam = _table_from(lambda x, z: np.full_like(z, 0.4), params)
    leg = build_legendre_table(lam, params, n_alpha=401)
    assert np.all(np.isfinite(leg(0.0, np.linspace(-2, 2, 11))))
    assert np.all(leg(0.0, np.array([-2.01, 2.5])) == NEG_INF)


def test_table_requires_z_coverage():
    lam = _table_from(lambda x, z: z * 0, TruncationParams(M=1.0, kappa=1.6, a=0.1))
    with pytest.raises(ConfigurationError):
        build_legendre_table(lam, P10)


def _concave_table(params):
    return _table_from(lambda x, z: 0.2 * np.tanh(x) + np.minimum(0.6 * z, -0.3 * z) + 0.1 - 0.05 * z**2 / (1 + z**2),
                       params, nx=5, nz=201)


def test_round_trip_and_audit_smooth_concave():
    params = TruncationParams(M=1.0, kappa=4.0, a=0.5)
    lam = _concave_table(params)
    leg = build_legendre_table(lam, params, n_alpha=2001, n_z=201)
    err, excess, _ = round_trip_error(leg, lam, params)
    assert err <= 0.02
    checks = legendre_property_audit(lam, leg, params, L=2.0)
    assert all(ok for ok, _, _ in checks.values()), checks


def test_recover_respects_lipschitz_transfer():
    params = TruncationParams(M=1.0, kappa=4.0, a=0.5)
    lam = _concave_table(params)
    leg = build_legendre_table(lam, params, n_alpha=2001)
    z = np.linspace(-2, 2, 21)
    a, b = fenchel_recover(leg, 0.0, z), fenchel_recover(leg, 0.0, 2 * z)
    assert np.all(b <= a + (params.M + 1) * np.abs(z) + 1e-9)


def test_legendre_csv_round_trip(tmp_path):
    params = TruncationParams(M=1.0, kappa=4.0, a=0.5)
    leg = build_legendre_table(_concave_table(params), params, n_alpha=201)
    leg.to_csv(tmp_path / "leg.csv")
    back = LegendreTable.from_csv(tmp_path / "leg.csv")
    assert np.array_equal(back.values, leg.values)
    assert back.radius == leg.radius
    assert back(0.0, 2.5) == NEG_INF


@pytest.mark.parametrize("lip, a, kappa", [(1.0, 1.5, 10.0), (0.0, 0.1, 1.6)])
def test_choose_kappa(lip, a, kappa):
    p = choose_kappa(linear_toy(), [0.4, 0.1], lip)
    assert p.a == pytest.approx(a) and p.kappa == pytest.approx(kappa)


def test_choose_kappa_zero_paths():
    with pytest.raises(ConfigurationError):
        choose_kappa(linear_toy(), [0.1], ValueEstimate(0.3, 0.0, 0))


def test_containment_fraction():
    p = TruncationParams(M=1.0, kappa=1.6, a=0.1)
    assert p.identity_radius == pytest.approx(0.2)
    assert containment_fraction(np.array([0.1, -0.19, 0.5, 0.0]), p) == 0.75
