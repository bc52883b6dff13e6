import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from twoscale.dynamics import (
    HORIZON, TwoScaleParams, clip_ball, moment_report, moment_uniformity, reduced_noise, replay,
    simulate_frozen_fast, simulate_pair, simulate_reduced,
)
from twoscale.errors import ConfigurationError, IntegrationDiverged
from twoscale.model import linear_toy, one_mode_ergodic, reaction_diffusion


def _replace(model, **changes):
    fields = {f: getattr(model, f) for f in model.__dataclass_fields__}
    fields.update(changes)
    return type(model)(**fields)


def _contraction_slope(t, d):
    return np.polyfit(t, np.log(d), 1)[0]


@pytest.mark.parametrize("eps, expected_dt", [(0.5, 1 / 200), (0.02, 0.002)])
def test_default_dt_covers_horizon(eps, expected_dt):
    p = TwoScaleParams(eps)
    assert p.dt == pytest.approx(expected_dt)
    assert p.n_steps * p.dt == pytest.approx(HORIZON, abs=1e-12)


@pytest.mark.parametrize("kwargs", [dict(epsilon=0.0), dict(epsilon=0.1, eta=-1), dict(epsilon=0.1, dt=-1)])
def test_params_rejected(kwargs):
    with pytest.raises(ConfigurationError):
        TwoScaleParams(**kwargs)


def test_pure_semigroup_slow_path():
    model = one_mode_ergodic(controlled=False)
    params = TwoScaleParams(0.1, 0.0, x0=[1.0])
    bundle = simulate_pair(model, params, None, 3, seed=1)
    exact = np.exp(-np.pi**2 * bundle.times)
    assert np.max(np.abs(bundle.X[:, :, 0] - exact)) < 1e-8


def test_same_seed_identical_bundle():
    model = reaction_diffusion()
    params = TwoScaleParams(0.05, 0.1)
    pol = lambda t, x, q: np.full(x.shape[0], 3)
    a = simulate_pair(model, params, pol, 20, seed=4)
    b = simulate_pair(model, params, pol, 20, seed=4)
    for name in ("X", "Q", "dW1", "dW2", "dB", "u", "running_cost", "terminal_cost"):
        assert np.array_equal(getattr(a, name), getattr(b, name)), name


def test_replay_bit_exact():
    model = reaction_diffusion()
    params = TwoScaleParams(0.05, 0.2)
    pol = lambda t, x, q: (x[:, 0] > 0.3).astype(int) + 2 * (q[:, 0] > 0)
    a = simulate_pair(model, params, pol, 16, seed=9)
    b = replay(model, params, pol, a)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.Q, b.Q)


@pytest.mark.parametrize("eps", [0.05, 0.2])
def test_fast_contraction_rate(eps):
    # linear fast drift: the difference decays at exactly mu / eps along mode 1
    model = linear_toy()
    params = TwoScaleParams(eps, 0.0)
    a = simulate_pair(model, params, None, 1, seed=2)
    b = simulate_pair(model, TwoScaleParams(eps, 0.0, q0=[1.5, 0.0]), None,
                      noise=(a.dW1, a.dW2, a.dB))
    t = a.times
    keep = t <= 5 * eps
    d = np.linalg.norm(a.Q[0] - b.Q[0], axis=-1)[keep]
    slope = _contraction_slope(t[keep], d)
    assert slope == pytest.approx(-model.mu / eps, rel=0.1)


def test_fast_contraction_reaction_diffusion():
    model = reaction_diffusion()
    eps = 0.05
    params = TwoScaleParams(eps, 0.1)
    a = simulate_pair(model, params, None, 4, seed=3)
    b = simulate_pair(model, TwoScaleParams(eps, 0.1, q0=np.zeros(model.n_fast)), None,
                      noise=(a.dW1, a.dW2, a.dB))
    keep = a.times <= 5 * eps
    for i in range(4):
        d = np.linalg.norm(a.Q[i] - b.Q[i], axis=-1)[keep]
        assert _contraction_slope(a.times[keep], d) <= -model.mu / eps * 0.9


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_integration_diverged_names_step():
    model = _replace(one_mode_ergodic(controlled=False), A_eigs=[800.0])
    with pytest.raises(IntegrationDiverged) as info:
        simulate_pair(model, TwoScaleParams(0.1, x0=[1.0]), None, 1)
    assert info.value.step > 1


def test_pathbundle_csv(tmp_path):
    model = linear_toy()
    bundle = simulate_pair(model, TwoScaleParams(0.2, 0.1), lambda t, x, q: np.zeros(len(x), int), 2)
    path = tmp_path / "p.csv"
    bundle.to_csv(path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:3] == ["t", "X0", "X1"]
    assert len(rows) == 1 + bundle.times.size
    assert float(rows[-1][1]) == pytest.approx(bundle.X[0, -1, 0], rel=1e-12)


def test_frozen_fast_zero_equilibrium():
    model = one_mode_ergodic(controlled=False)
    model = _replace(model, G=[0.0])
    _, Q = simulate_frozen_fast(model, [0.0], None, T=2.0, dt=0.01, n_paths=3)
    assert np.all(Q == 0)


def test_frozen_fast_stationary_variance():
    model = one_mode_ergodic(controlled=False, m=1.0, g=3.0)
    _, Q = simulate_frozen_fast(model, [0.0], None, T=3.0, dt=0.01, n_paths=4000, seed=5)
    samples = Q[:, -1, 0] ** 2
    target = 9.0 / (2 * (np.pi**2 + 1))
    assert abs(samples.mean() - target) <= 3 * samples.std(ddof=1) / np.sqrt(samples.size)


def test_frozen_fast_contraction():
    model = one_mode_ergodic(controlled=True)
    _, a = simulate_frozen_fast(model, [0.0], None, T=0.5, dt=0.005, n_paths=1, seed=6)
    _, b = simulate_frozen_fast(model, [0.0], None, T=0.5, dt=0.005, n_paths=1, seed=6, q0=[1.0])
    t = np.linspace(0, 0.5, a.shape[1])
    slope = _contraction_slope(t, np.abs(a[0, :, 0] - b[0, :, 0]))
    assert slope <= -0.9 * model.mu


def test_frozen_fast_rejects_nonpositive_horizon():
    with pytest.raises(ValueError):
        simulate_frozen_fast(linear_toy(), [0.0, 0.0], T=0.0)


def test_reduced_pure_semigroup():
    model = one_mode_ergodic(controlled=False)
    paths = simulate_reduced(model, 0.0, None, dt=0.01, x0=[1.0])
    assert np.max(np.abs(paths.X[0, :, 0] - np.exp(-np.pi**2 * paths.times))) < 1e-12


@pytest.mark.parametrize("a", [-0.7, 0.0, 1.3])
def test_reduced_linear_drift(a):
    model = _replace(one_mode_ergodic(controlled=False), A_eigs=[0.0])
    paths = simulate_reduced(model, 0.0, lambda t, x: np.full((x.shape[0], 1), a), dt=0.01, x0=[0.4])
    assert np.max(np.abs(paths.X[0, :, 0] - (0.4 - a * paths.times))) < 1e-12
    assert paths.n_clipped == 0


def test_reduced_clips_to_ball():
    model = _replace(one_mode_ergodic(controlled=False), A_eigs=[0.0])
    paths = simulate_reduced(model, 0.0, lambda t, x: np.full((x.shape[0], 1), 5.0), dt=0.1, x0=[0.0])
    assert paths.n_clipped == 10
    assert paths.X[0, -1, 0] == pytest.approx(-(model.M + 1))


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(0.1, 3))
def test_clip_ball_radius(v, radius):
    out, _ = clip_ball(np.array([v]), radius)
    assert np.linalg.norm(out) <= radius * (1 + 1e-12)
    if np.linalg.norm(v) <= radius:
        assert np.array_equal(out[0], v)


def test_reduced_eta_stability_rate():
    model = reaction_diffusion()
    noise = reduced_noise(model, 0.01, 400, seed=8)
    base = simulate_reduced(model, 0.0, None, noise=noise).X
    etas = np.array([0.4, 0.2, 0.1, 0.05])
    dev = [np.mean(np.max(np.linalg.norm(simulate_reduced(model, e, None, noise=noise).X - base, axis=-1),
                          axis=1)) for e in etas]
    slope = np.polyfit(np.log(etas), np.log(dev), 1)[0]
    assert slope >= 0.8


def test_moment_report_trivial_and_jensen():
    model = _replace(one_mode_ergodic(controlled=False), A_eigs=[0.0], G=[0.0], x0=[0.7])
    rep = moment_report(model, TwoScaleParams(0.1), n_paths=5)
    assert rep.sup_x[0] == pytest.approx(0.7, abs=1e-15)
    rep = moment_report(reaction_diffusion(), TwoScaleParams(0.1, 0.2), n_paths=200)
    assert rep.sup_x[0] ** 2 <= rep.sup_x[1]
    assert rep.sup_x[1] ** 2 <= rep.sup_x[2]


GRID = [(e, h) for e in (0.05, 0.2) for h in (0.0, 0.2)]


def test_moment_uniformity_grid():
    ratio, ok = moment_uniformity(linear_toy(), GRID, n_paths=200)
    assert ok and ratio <= 2


def test_moment_uniformity_flags_small_initial_state():
    # with |x0| = 0.2 and no other slow noise, eta = 0.2 doubles E sup|X|^2
    ratio, ok = moment_uniformity(reaction_diffusion(), GRID, n_paths=200)
    assert not ok and ratio > 2
