"""Reduced control problem on the slow variable alone.

Minimize ``E[h(X_1) - int_0^1 star(X_s, alpha_s) ds]`` subject to
``dX = AX dt - alpha dt + R(X) dW + eta dB`` and ``|alpha| <= M + 1``, where
``star`` is the tabulated conjugate of the truncated ergodic value.  The
tables are indexed by the active slow coordinate, so the deterministic solver
and the dynamic-programming oracle work on that coordinate alone.
"""

from dataclasses import dataclass, field

import numpy as np

from twoscale.dynamics import HORIZON, clip_ball, reduced_noise, simulate_reduced
from twoscale.errors import ConfigurationError, InvariantViolation
from twoscale.estimates import ValueEstimate

COORD_STEPS = (0.4, 0.2, 0.1, 0.05, 0.025, 0.0125)


@dataclass
class ReducedPolicy:
    """Feedback ``alpha(t, x)`` along the active mode, clipped to the ball.

    On time block ``j`` the active component is
    ``theta[j] . (1, d, d^2)`` with ``d = x_a - center``.
    """

    theta: np.ndarray
    n_slow: int
    active_mode: int = 0
    center: float = 0.0
    radius: float = 2.0

    @property
    def n_blocks(self):
        return self.theta.shape[0]

    def features(self, xa):
        d = xa - self.center
        return np.stack([np.ones_like(d), d, d * d], axis=-1)

    def active(self, t, xa):
        j = min(int(t / HORIZON * self.n_blocks + 1e-9), self.n_blocks - 1)
        return np.clip(self.features(xa) @ self.theta[j], -self.radius, self.radius)

    def __call__(self, t, x):
        out = np.zeros((x.shape[0], self.n_slow))
        out[:, self.active_mode] = self.active(t, x[:, self.active_mode])
        return clip_ball(out, self.radius)[0]


def _star_running(model, table):
    am = model.active_mode

    def running(k, t, x, alpha):
        a = np.zeros(x.shape[0]) if alpha is None else alpha[:, am]
        vals = table(x[:, am], a)
        if not np.all(np.isfinite(vals)):
            raise InvariantViolation("conjugate evaluated outside the control ball")
        return -vals

    return running


def reduced_cost(model, table, eta, policy, noise, x0=None):
    """Per-path reduced cost of ``policy`` on given increments."""
    paths = simulate_reduced(model, eta, policy, noise=noise, x0=x0,
                             running=_star_running(model, table), store=False)
    return paths.running + model.h(paths.X[:, -1])


def table_error(model, table, eta, policy, noise, x0=None):
    """Per-path integral of the table's standard error along the controlled paths.

    The conjugate table is itself a Monte Carlo estimate; this bounds the
    error it contributes to a reduced cost (errors taken fully correlated).
    """
    am = model.active_mode

    def running(k, t, x, alpha):
        a = np.zeros(x.shape[0]) if alpha is None else alpha[:, am]
        return table.stderr_at(x[:, am], a)

    return simulate_reduced(model, eta, policy, noise=noise, x0=x0, running=running,
                            store=False).running


def _with_table_error(costs, table_err, fingerprint):
    """Monte Carlo stderr combined with the mean table error."""
    est = ValueEstimate.from_samples(costs, fingerprint)
    mc = est.stderr
    tab = float(np.mean(table_err))
    return ValueEstimate(est.mean, float(np.hypot(mc, tab)), est.n, fingerprint,
                         dict(mc_stderr=mc, table_stderr=tab))


@dataclass
class ReducedResult:
    """Value on fresh paths, the fitted policy and the optimization history."""

    value: ValueEstimate
    policy: ReducedPolicy
    history: list = field(default_factory=list)


def solve_reduced(model, legendre_table, eta, n_paths=2000, n_rounds=6, seed=0, dt=0.01,
                  n_blocks=10, steps=COORD_STEPS, x0=None):
    """Coordinate search over ``ReducedPolicy`` coefficients with common random numbers.

    The search objective uses one fixed set of increments; the returned value
    is re-estimated on an independent set.  Its standard error combines the
    Monte Carlo error with the propagated table error (see ``table_error``).  ``history`` holds the running
    minimum after each round and is non-increasing.
    """
    radius = model.M + 1
    xa0 = float(model.x0[model.active_mode] if x0 is None else np.asarray(x0)[model.active_mode])
    policy = ReducedPolicy(np.zeros((n_blocks, 3)), model.n_slow, model.active_mode, xa0, radius)
    noise = reduced_noise(model, dt, n_paths, seed, prefix="reduced-fit/")

    def objective(theta):
        policy.theta = theta
        return reduced_cost(model, legendre_table, eta, policy, noise, x0).mean()

    theta = np.zeros((n_blocks, 3))
    best = objective(theta)
    history = [best]
    for r in range(n_rounds):
        step = steps[min(r, len(steps) - 1)]
        for j in range(n_blocks):
            for c in range(3):
                scale = step * (1.0, 2.0, 4.0)[c]
                for sign in (1.0, -1.0):
                    trial = theta.copy()
                    trial[j, c] += sign * scale
                    val = objective(trial)
                    if val < best:
                        best, theta = val, trial
                        break
        history.append(best)
    policy.theta = theta
    fresh = reduced_noise(model, dt, n_paths, seed + 1, prefix="reduced-eval/")
    costs = reduced_cost(model, legendre_table, eta, policy, fresh, x0)
    err = table_error(model, legendre_table, eta, policy, fresh, x0)
    return ReducedResult(_with_table_error(costs, err, f"reduced-{model.fingerprint()}-{eta}"),
                         policy, history)


# --------------------------------------------------------------- deterministic


def _active_scalars(model, dt):
    am = model.active_mode
    decay = float(model.sgA.factors(dt)[am])
    phi = float(model.sgA.phi1(dt)[am])
    return am, decay, phi


def _h1(model, xa):
    return model.h(model.embed_slow(xa))


@dataclass
class DeterministicResult:
    """Best open-loop cost, its controls and path, and the cost of each start.

    ``table_stderr`` is the table error integrated along the optimal path.
    """

    value: float
    alpha: np.ndarray
    x: np.ndarray
    times: np.ndarray
    starts: list
    table_stderr: float = 0.0


def solve_reduced_deterministic(model, legendre_table, n_steps=100, n_starts=8, seed=0,
                                max_iter=300, tol=1e-10, x0=None):
    """Open-loop controls by projected gradient with Armijo steps and multi-start.

    The active coordinate follows the same exponential-Euler map as the
    stochastic solver with ``R = 0`` and ``eta = 0``; gradients come from the
    adjoint recursion and the interpolant's partial derivatives.
    """
    if not model.R_zero:
        raise ConfigurationError("the deterministic reduced solver needs R = 0")
    dt = HORIZON / n_steps
    am, decay, phi = _active_scalars(model, dt)
    xa0 = float(model.x0[am] if x0 is None else np.asarray(x0)[am])
    radius = model.M + 1
    times = np.linspace(0.0, HORIZON, n_steps + 1)

    def forward(alpha):
        x = np.empty(n_steps + 1)
        x[0] = xa0
        for k in range(n_steps):
            x[k + 1] = decay * x[k] - phi * alpha[k]
        return x

    def cost(alpha):
        x = forward(alpha)
        return float(_h1(model, x[-1:])[0] - np.sum(legendre_table(x[:-1], alpha)) * dt), x

    def grad(alpha, x):
        dsx, dsa = legendre_table.gradient(x[:-1], alpha)
        e = 1e-6
        p = float((_h1(model, x[-1:] + e)[0] - _h1(model, x[-1:] - e)[0]) / (2 * e))
        g = np.empty(n_steps)
        for k in range(n_steps - 1, -1, -1):
            g[k] = -dsa[k] * dt - phi * p
            p = decay * p - dsx[k] * dt
        return g

    rng = np.random.default_rng(seed)
    inits = [np.zeros(n_steps)] + [np.full(n_steps, v) for v in rng.uniform(-radius, radius, n_starts - 1)]
    best = None
    starts = []
    for alpha in inits:
        J, x = cost(alpha)
        step = 1.0
        for _ in range(max_iter):
            g = grad(alpha, x)
            improved = False
            while step > 1e-8:
                trial = np.clip(alpha - step * g, -radius, radius)
                Jt, xt = cost(trial)
                if Jt <= J - 1e-4 * np.dot(g, alpha - trial):
                    improved = Jt < J - tol
                    alpha, J, x = trial, Jt, xt
                    step *= 2.0
                    break
                step *= 0.5
            if not improved:
                break
        starts.append(J)
        if best is None or J < best[0]:
            best = (J, alpha, x)
    J, alpha, x = best
    tab = float(np.sum(legendre_table.stderr_at(x[:-1], alpha)) * dt)
    return DeterministicResult(J, alpha, x, times, starts, tab)


# ------------------------------------------------------------------- DP oracle


def dp_oracle(model, legendre_table, x_grid, alpha_grid, n_steps=100, x0=None, eta=0.0,
              n_nodes=5):
    """Backward dynamic programming on the active coordinate.

    Transitions use ``n_nodes``-point Gauss-Hermite quadrature for the noise
    and linear interpolation in ``x`` (constant beyond the grid ends).

    Raises
    ------
    ConfigurationError
        If ``x0`` lies outside ``x_grid``.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    alpha_grid = np.asarray(alpha_grid, dtype=float)
    dt = HORIZON / n_steps
    am, decay, phi = _active_scalars(model, dt)
    xa0 = float(model.x0[am] if x0 is None else np.asarray(x0)[am])
    if not x_grid[0] <= xa0 <= x_grid[-1]:
        raise ConfigurationError(f"x0 = {xa0} outside the DP grid")
    nodes, weights = np.polynomial.hermite_e.hermegauss(n_nodes)
    weights = weights / weights.sum()
    r = model.R(model.embed_slow(x_grid))[:, am]
    sd = decay * np.sqrt(r**2 + eta**2) * np.sqrt(dt)
    star = legendre_table(x_grid[:, None], alpha_grid[None, :])
    if not np.all(np.isfinite(star)):
        raise InvariantViolation("DP alpha grid leaves the control ball")
    # next states: (x, alpha, node)
    nxt = (decay * x_grid[:, None, None] - phi * alpha_grid[None, :, None]
           + sd[:, None, None] * nodes[None, None, :])
    V = _h1(model, x_grid)
    for _ in range(n_steps):
        cont = np.interp(nxt, x_grid, V) @ weights
        V = np.min(-star * dt + cont, axis=1)
    return float(np.interp(xa0, x_grid, V))
