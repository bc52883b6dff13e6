import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from twoscale.errors import ConfigurationError
from twoscale.spectral import (
    DiagonalSemigroup, NoiseSpec, SineBasis, apply_semigroup, fit_hs_constant,
    inverse_sine_transform, laplacian_eigenvalues, noise_block, noise_increment, sine_transform,
)


@pytest.mark.parametrize("t, expected", [(0.0, 2.0), (0.5, 2.0 * np.exp(-0.5))])
def test_apply_semigroup_scalar(t, expected):
    out = apply_semigroup(DiagonalSemigroup(np.array([-1.0])), t, np.array([2.0]))
    assert out == pytest.approx([expected], abs=1e-15)


def test_apply_semigroup_half_unit_value():
    out = apply_semigroup(DiagonalSemigroup(np.array([-1.0])), 0.5, np.array([2.0]))
    assert out[0] == pytest.approx(1.21306, abs=1e-5)


def test_apply_semigroup_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        apply_semigroup(DiagonalSemigroup(np.array([-1.0, -2.0])), 0.1, np.ones(3))


def test_laplacian_hs_decay_quarter_exponent():
    sg = DiagonalSemigroup(laplacian_eigenvalues(64))
    s_grid = np.logspace(-4, 0, 81)
    # direct summation oracle
    direct = np.array([np.sqrt(np.sum(np.exp(-2 * (np.arange(1, 65) * np.pi) ** 2 * s))) for s in s_grid])
    C = fit_hs_constant(sg, 0.25, s_grid)
    assert np.all(direct <= C * s_grid ** -0.25 * (1 + 1e-12))
    assert C == pytest.approx(np.max(direct * s_grid**0.25), rel=1e-12)


@given(
    eig=arrays(float, 5, elements=st.floats(-50, 0)),
    v=arrays(float, 5, elements=st.floats(-10, 10)),
    s=st.floats(0, 1), t=st.floats(0, 1),
)
def test_semigroup_property(eig, v, s, t):
    sg = DiagonalSemigroup(eig)
    lhs = apply_semigroup(sg, s, apply_semigroup(sg, t, v))
    rhs = apply_semigroup(sg, s + t, v)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * (1 + np.max(np.abs(v)))


@given(t=st.floats(0, 5), v=arrays(float, 8, elements=st.floats(-10, 10)))
def test_b_semigroup_contracts(t, v):
    mu = 0.6
    sg = DiagonalSemigroup(laplacian_eigenvalues(8, 0.1, 1.0))
    assert sg.eigenvalues.max() <= -mu
    assert np.linalg.norm(apply_semigroup(sg, t, v)) <= np.exp(-mu * t) * np.linalg.norm(v) + 1e-12


def test_sine_transform_eigenfunction():
    xi = np.arange(1, 64) / 64.0
    c = sine_transform(np.sin(np.pi * xi))
    assert c[0] == pytest.approx(1.0, abs=1e-10)
    assert np.max(np.abs(c[1:])) < 1e-10


def test_sine_transform_zero():
    assert np.all(sine_transform(np.zeros(63)) == 0)


def test_sine_round_trip_smooth(rng):
    xi = np.arange(1, 64) / 64.0
    a = rng.normal(size=4)
    f = sum(a[j] * np.sin((j + 1) * np.pi * xi) ** (j + 1) for j in range(4)) + xi * (1 - xi)
    back = inverse_sine_transform(sine_transform(f), 63)
    assert np.max(np.abs(back - f)) < 1e-10


def test_sine_transform_too_many_modes():
    with pytest.raises(ConfigurationError):
        sine_transform(np.zeros(7), n_modes=8)
    with pytest.raises(ConfigurationError):
        SineBasis(7, 8)


def test_sine_basis_orthonormal():
    basis = SineBasis(63, 8)
    gram = basis.phi @ basis.phi.T * basis.weight
    assert np.allclose(gram, np.eye(8), atol=1e-12)
    c = np.arange(1.0, 9.0)
    assert np.allclose(basis.from_field(basis.to_field(c)), c, atol=1e-12)


def test_noise_unit_variance():
    z = noise_increment(NoiseSpec(100_000, 3, "W1"), 1.0)
    assert 0.99 <= z.var() <= 1.01


def test_noise_deterministic():
    spec = NoiseSpec(4, 7, "W2")
    assert np.array_equal(noise_increment(spec, 0.1, 3, 5), noise_increment(spec, 0.1, 3, 5))


def test_noise_streams_independent():
    a = noise_increment(NoiseSpec(100_000, 11, "W1"), 1.0)
    b = noise_increment(NoiseSpec(100_000, 11, "W2"), 1.0)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.02


@pytest.mark.parametrize("dt", [0.0, -0.1])
def test_noise_rejects_nonpositive_dt(dt):
    with pytest.raises(ValueError):
        noise_increment(NoiseSpec(2, 0), dt)


def test_noise_block_matches_increment_and_prefix():
    spec = NoiseSpec(3, 5, "B")
    block = noise_block(spec, 0.01, 300, 6)
    assert np.array_equal(block[270, 4], noise_increment(spec, 0.01, 4, 270))
    # fewer paths or steps give a prefix of the same increments
    assert np.array_equal(noise_block(spec, 0.01, 10, 3), block[:10, :3])


def test_noise_block_antithetic():
    block = noise_block(NoiseSpec(2, 1), 0.1, 8, 4, antithetic=True)
    assert np.array_equal(block[1::2], -block[0::2])
    with pytest.raises(ConfigurationError):
        noise_block(NoiseSpec(2, 1), 0.1, 7, 4, antithetic=True)
