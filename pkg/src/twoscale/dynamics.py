"""Exponential-Euler integration of the slow, fast and reduced equations.

Slow step (mode-wise, left-point coefficients)::

    X' = e^{dt A} (X + R(X) dW1 + eta dB) + phi(dt A) b

Fast step with exact treatment of the stiff linear part::

    Q' = e^{dt B / eps} Q + (e^{dt B / eps} - 1) / B (F + G rho) + S dW2 / sqrt(dt)

where ``S_k = g_k sqrt((e^{2 dt B_k / eps} - 1) / (2 B_k))`` is the exact
standard deviation of the stochastic convolution over one step.  Feeding
the stored Brownian increment through ``S / sqrt(dt)`` keeps paths
replayable from their increments.
"""

from dataclasses import dataclass
import csv

import numpy as np

from twoscale.errors import ConfigurationError, IntegrationDiverged
from twoscale.spectral import NoiseSpec, noise_block

HORIZON = 1.0


@dataclass
class TwoScaleParams:
    """Time grid and scale parameters of one simulation.

    ``dt`` defaults to ``min(eps / 10, 1 / 200)`` and is then adjusted so that
    an integer number of steps covers the unit horizon.
    """

    epsilon: float
    eta: float = 0.0
    dt: float = None
    x0: np.ndarray = None
    q0: np.ndarray = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive")
        if self.eta < 0:
            raise ConfigurationError("eta must be nonnegative")
        dt = self.dt if self.dt is not None else default_dt(self.epsilon)
        if dt <= 0:
            raise ConfigurationError("dt must be positive")
        self.n_steps = int(round(HORIZON / dt))
        self.dt = HORIZON / self.n_steps

    @property
    def times(self):
        return np.linspace(0.0, HORIZON, self.n_steps + 1)


def default_dt(epsilon):
    return min(epsilon / 10.0, 1.0 / 200.0)


class SlowStepper:
    """One exponential-Euler step of the slow equation."""

    def __init__(self, model, dt):
        self.model = model
        self.decay = model.sgA.factors(dt)
        self.phi = model.sgA.phi1(dt)

    def step(self, x, drift, dW1, dB, eta):
        kick = x
        if dW1 is not None:
            kick = kick + self.model.R(x) * dW1
        if eta:
            kick = kick + eta * dB
        out = self.decay * kick
        if drift is not None:
            out = out + self.phi * drift
        return out


class FastStepper:
    """One exponential-Euler step of ``eps dQ = (BQ + F + G rho) dt + sqrt(eps) G dW``."""

    def __init__(self, model, epsilon, dt):
        beta = model.B_eigs
        r = dt / epsilon
        self.model = model
        self.dt = dt
        self.decay = np.exp(beta * r)
        self.phi = np.expm1(beta * r) / beta
        self.noise_sd = model.G * np.sqrt(np.expm1(2 * beta * r) / (2 * beta))
        self.noise_scale = self.noise_sd / np.sqrt(dt)

    def step(self, x, q, dW2, forcing=None):
        drive = self.model.F(x, q)
        if forcing is not None:
            drive = drive + forcing
        out = self.decay * q + self.phi * drive
        if dW2 is not None:
            out = out + self.noise_scale * dW2
        return out


@dataclass
class PathBundle:
    """Simulated paths and the increments that produced them.

    Arrays are indexed ``(path, step, mode)``.  ``X`` and ``Q`` hold
    ``n_steps + 1`` states (or only the final state when simulated with
    ``store=False``); ``u`` holds control indices per step.
    """

    times: np.ndarray
    X: np.ndarray
    Q: np.ndarray
    dW1: np.ndarray
    dW2: np.ndarray
    dB: np.ndarray
    u: np.ndarray = None
    running_cost: np.ndarray = None
    terminal_cost: np.ndarray = None

    @property
    def n_paths(self):
        return self.dW1.shape[0]

    def cost(self):
        """Per-path realized cost ``sum l dt + h(X_1)``."""
        return self.running_cost + self.terminal_cost

    def to_csv(self, path, path_index=0):
        """Write one path as rows ``t, X_k..., Q_k..., dW1_k..., dW2_k..., dB_k..., u``."""
        X, Q = self.X[path_index], self.Q[path_index]
        n_steps = self.dW1.shape[1]
        header = (["t"] + [f"X{k}" for k in range(X.shape[-1])]
                  + [f"Q{k}" for k in range(Q.shape[-1])]
                  + [f"dW1_{k}" for k in range(self.dW1.shape[-1])]
                  + [f"dW2_{k}" for k in range(self.dW2.shape[-1])]
                  + [f"dB_{k}" for k in range(self.dB.shape[-1])] + ["u"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(n_steps + 1):
                inc = (np.concatenate([self.dW1[path_index, k], self.dW2[path_index, k],
                                       self.dB[path_index, k]])
                       if k < n_steps else np.full(len(header) - 2 - X.shape[-1] - Q.shape[-1], np.nan))
                u = self.u[path_index, k] if (self.u is not None and k < n_steps) else -1
                w.writerow([repr(float(self.times[k]))] + [repr(float(v)) for v in X[k]]
                           + [repr(float(v)) for v in Q[k]] + [repr(float(v)) for v in inc] + [int(u)])


def pair_noise(model, params, n_paths, seed, prefix="", antithetic=False):
    """Increments ``(dW1, dW2, dB)`` keyed by ``seed`` and stream names.

    ``antithetic`` applies to the regularizing noise ``B`` only.
    """
    dt, n = params.dt, params.n_steps
    dW1 = noise_block(NoiseSpec(model.n_slow, seed, prefix + "W1"), dt, n_paths, n)
    dW2 = noise_block(NoiseSpec(model.n_noise, seed, prefix + "W2"), dt, n_paths, n)
    dB = noise_block(NoiseSpec(model.n_slow, seed, prefix + "B"), dt, n_paths, n, antithetic)
    return dW1, dW2, dB


def _initial(v, default, n, dim):
    v = default if v is None else np.asarray(v, dtype=float)
    v = np.broadcast_to(v, (n, dim)).copy() if v.ndim < 2 else v.copy()
    if v.shape != (n, dim):
        raise ConfigurationError(f"initial state has shape {v.shape}, expected {(n, dim)}")
    return v


def simulate_pair(model, params, policy=None, n_paths=1, seed=0, noise=None,
                  store=True, antithetic=False, prefix=""):
    """Simulate the controlled two-scale system on the unit horizon.

    Parameters
    ----------
    model : ModelSpec
    params : TwoScaleParams
    policy : callable or None
        ``policy(t, x, q) -> control indices``.  ``None`` simulates the
        uncontrolled pair (no ``b`` and no ``rho`` terms, no running cost).
    n_paths, seed : int
        Number of paths and noise seed (ignored when ``noise`` is given).
    noise : tuple, optional
        Increments ``(dW1, dW2, dB)`` to replay.
    store : bool
        Keep full trajectories; otherwise only final states and costs.
    antithetic : bool
        Pair paths with opposite ``B`` increments.

    Returns
    -------
    PathBundle

    Raises
    ------
    IntegrationDiverged
        If a state becomes non-finite.
    """
    if noise is None:
        noise = pair_noise(model, params, n_paths, seed, prefix, antithetic)
    dW1, dW2, dB = noise
    n_paths, n_steps = dW1.shape[0], dW1.shape[1]
    if n_steps != params.n_steps:
        raise ConfigurationError("noise does not match the time grid")
    dt, eta = params.dt, params.eta
    slow = SlowStepper(model, dt)
    fast = FastStepper(model, params.epsilon, dt)
    times = params.times
    x = _initial(params.x0, model.x0, n_paths, model.n_slow)
    q = _initial(params.q0, model.q0, n_paths, model.n_fast)
    if store:
        X = np.empty((n_paths, n_steps + 1, model.n_slow))
        Q = np.empty((n_paths, n_steps + 1, model.n_fast))
        X[:, 0], Q[:, 0] = x, q
    u_hist = np.empty((n_paths, n_steps), dtype=np.int32) if policy is not None else None
    running = np.zeros(n_paths)
    rows = np.arange(n_paths)
    for k in range(n_steps):
        drift = forcing = None
        if policy is not None:
            idx = np.asarray(policy(times[k], x, q), dtype=np.int64)
            b_all, l_all = model.controls(x, q)
            drift = b_all[rows, idx]
            forcing = model.G * model.rho_table[idx]
            running += l_all[rows, idx] * dt
            u_hist[:, k] = idx
        x_new = slow.step(x, drift, dW1[:, k], dB[:, k], eta)
        q = fast.step(x, q, dW2[:, k], forcing)
        x = x_new
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(q))):
            raise IntegrationDiverged(k + 1)
        if store:
            X[:, k + 1], Q[:, k + 1] = x, q
    if not store:
        X, Q = x[:, None], q[:, None]
    return PathBundle(times, X, Q, dW1, dW2, dB, u_hist, running, model.h(x))


def replay(model, params, policy, bundle):
    """Re-integrate the increments stored in ``bundle``."""
    return simulate_pair(model, params, policy, noise=(bundle.dW1, bundle.dW2, bundle.dB))


def simulate_frozen_fast(model, x, policy=None, T=10.0, dt=0.01, n_paths=1, seed=0,
                         q0=None, noise=None, prefix="frozen/"):
    """Fast process with the slow state frozen at ``x``, unit time scale.

    ``policy(t, q) -> control indices`` (or ``None``).  Returns
    ``(times, Q)`` with ``Q`` of shape ``(n_paths, n_steps + 1, n_fast)``.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    n_steps = int(round(T / dt))
    dt = T / n_steps
    if noise is None:
        noise = noise_block(NoiseSpec(model.n_noise, seed, prefix + "W2"), dt, n_paths, n_steps)
    fast = FastStepper(model, 1.0, dt)
    xs = np.broadcast_to(np.asarray(x, dtype=float), (n_paths, model.n_slow))
    q = _initial(q0, np.zeros(model.n_fast), n_paths, model.n_fast)
    Q = np.empty((n_paths, n_steps + 1, model.n_fast))
    Q[:, 0] = q
    times = np.linspace(0.0, T, n_steps + 1)
    for k in range(n_steps):
        forcing = None
        if policy is not None:
            idx = np.asarray(policy(times[k], q), dtype=np.int64)
            forcing = model.G * model.rho_table[idx]
        q = fast.step(xs, q, noise[:, k], forcing)
        if not np.all(np.isfinite(q)):
            raise IntegrationDiverged(k + 1)
        Q[:, k + 1] = q
    return times, Q


def clip_ball(alpha, radius):
    """Radially project rows of ``alpha`` onto the ball; returns ``(clipped, n_clipped)``."""
    norm = np.linalg.norm(alpha, axis=-1)
    over = norm > radius
    if np.any(over):
        alpha = alpha.copy()
        alpha[over] *= (radius / norm[over])[:, None]
    return alpha, int(over.sum())


@dataclass
class ReducedPaths:
    """Output of ``simulate_reduced``."""

    times: np.ndarray
    X: np.ndarray
    running: np.ndarray
    n_clipped: int


def reduced_noise(model, dt, n_paths, seed, prefix="reduced/"):
    n_steps = int(round(HORIZON / dt))
    dt = HORIZON / n_steps
    dW1 = noise_block(NoiseSpec(model.n_slow, seed, prefix + "W1"), dt, n_paths, n_steps)
    dB = noise_block(NoiseSpec(model.n_slow, seed, prefix + "B"), dt, n_paths, n_steps)
    return dW1, dB


def simulate_reduced(model, eta, alpha_policy, dt=0.01, n_paths=1, seed=0, noise=None,
                     x0=None, running=None, store=True):
    """Slow-only equation ``dX = AX dt - alpha dt + R(X) dW + eta dB``.

    Parameters
    ----------
    alpha_policy : callable or None
        ``alpha_policy(t, x) -> (n, n_slow)``; outputs are clipped to the ball
        of radius ``M + 1`` and the number of clipped evaluations is counted.
    running : callable, optional
        ``running(k, t, x, alpha) -> (n,)``; its values times ``dt`` are summed.
    """
    if noise is None:
        noise = reduced_noise(model, dt, n_paths, seed)
    dW1, dB = noise
    n_paths, n_steps = dW1.shape[:2]
    dt = HORIZON / n_steps
    slow = SlowStepper(model, dt)
    times = np.linspace(0.0, HORIZON, n_steps + 1)
    x = _initial(x0, model.x0, n_paths, model.n_slow)
    X = np.empty((n_paths, n_steps + 1, model.n_slow)) if store else None
    if store:
        X[:, 0] = x
    acc = np.zeros(n_paths)
    clipped = 0
    r_dW = None if model.R_zero else dW1
    for k in range(n_steps):
        alpha = None
        if alpha_policy is not None:
            alpha, c = clip_ball(np.asarray(alpha_policy(times[k], x), dtype=float), model.M + 1)
            clipped += c
        if running is not None:
            acc += running(k, times[k], x, alpha) * dt
        x = slow.step(x, None if alpha is None else -alpha, r_dW[:, k] if r_dW is not None else None,
                      dB[:, k], eta)
        if not np.all(np.isfinite(x)):
            raise IntegrationDiverged(k + 1)
        if store:
            X[:, k + 1] = x
    if not store:
        X = x[:, None]
    return ReducedPaths(times, X, acc, clipped)


# ------------------------------------------------------------------- moments


@dataclass
class MomentReport:
    """``E sup_t |X|^p`` and ``sup_t E |Q|^p`` with standard errors, per p."""

    p: tuple
    sup_x: np.ndarray
    sup_x_se: np.ndarray
    sup_q: np.ndarray
    sup_q_se: np.ndarray

    def rows(self):
        return [
            dict(p=p, E_sup_X=float(a), E_sup_X_se=float(b), sup_E_Q=float(c), sup_E_Q_se=float(d))
            for p, a, b, c, d in zip(self.p, self.sup_x, self.sup_x_se, self.sup_q, self.sup_q_se)
        ]


def moment_report(model, params, n_paths=500, seed=0, policy=None, ps=(1, 2, 4)):
    """Moment estimates of the slow and fast processes."""
    bundle = simulate_pair(model, params, policy, n_paths, seed)
    nx = np.linalg.norm(bundle.X, axis=-1)
    nq = np.linalg.norm(bundle.Q, axis=-1)
    sx, sxe, sq, sqe = [], [], [], []
    for p in ps:
        s = nx.max(axis=1) ** p
        sx.append(s.mean())
        sxe.append(s.std(ddof=1) / np.sqrt(n_paths) if n_paths > 1 else 0.0)
        qp = nq**p
        t = np.argmax(qp.mean(axis=0))
        sq.append(qp[:, t].mean())
        sqe.append(qp[:, t].std(ddof=1) / np.sqrt(n_paths) if n_paths > 1 else 0.0)
    return MomentReport(tuple(ps), np.array(sx), np.array(sxe), np.array(sq), np.array(sqe))


def moment_uniformity(model, grid, n_paths=500, seed=0, p=2):
    """Ratio max/min of ``E sup |X|^p`` over ``(eps, eta)`` pairs; flagged when above 2."""
    vals = []
    for eps, eta in grid:
        rep = moment_report(model, TwoScaleParams(eps, eta), n_paths, seed, ps=(p,))
        vals.append(rep.sup_x[0])
    ratio = max(vals) / min(vals)
    return ratio, ratio <= 2.0
