"""Ergodic value of the frozen fast problem and its interpolation tables.

For a frozen slow state ``x`` and covector ``z`` the ergodic value is the
least long-run average of ``z . b + l`` for the fast process started at 0.
Two estimators are provided:

``cesaro_policy``
    Time averages after a burn-in under stationary feedback policies.
    Round 0 minimizes the instantaneous cost; each later round regresses a
    relative value function ``w(q)`` on the previous round's paths and takes
    the greedy control for ``z . b + l + grad w . G rho``.  The reported value
    is the best round, with common random numbers across rounds, ``z`` values
    and slow states.
``grid_vi``
    One fast mode only: relative value iteration on a Markov chain
    approximation of the fast diffusion on ``[-5 sd, 5 sd]`` with reflecting
    ends, ``sd`` being the stationary standard deviation without drift terms.
"""

from dataclasses import dataclass, field, asdict
import csv
import json

import numpy as np

from twoscale.basis import PolynomialBasis
from twoscale.dynamics import FastStepper
from twoscale.errors import ConfigurationError, IntegrationDiverged, OutOfRangeError, UnsupportedConfiguration
from twoscale.estimates import ValueEstimate
from twoscale.spectral import NoiseSpec, noise_block

# Floating-point allowance of the property audit.
ROUNDING = 1e-12


@dataclass
class ErgodicSettings:
    """Settings of the Cesaro policy-iteration estimator.

    ``T`` and ``burn_in`` default to ``max(10 / mu, T_min)`` and ``3 / mu``.
    The relative value regression uses a window of ``window_mu / mu`` time
    units and polynomial features of degree ``degree`` in the fast modes
    ``fast_modes``.
    """

    T: float = None
    burn_in: float = None
    T_min: float = 10.0
    n_paths: int = 128
    dt: float = 0.05
    n_rounds: int = 2
    fast_modes: tuple = (0,)
    degree: int = 4
    window_mu: float = 3.0
    sample_stride: int = 4
    seed: int = 0

    def resolve(self, mu):
        T = self.T if self.T is not None else max(10.0 / mu, self.T_min)
        burn = self.burn_in if self.burn_in is not None else 3.0 / mu
        if T < 10.0 / mu * (1 - 1e-12):
            raise ConfigurationError(f"horizon {T} below 10/mu = {10.0 / mu:.4g}")
        if burn < 3.0 / mu * (1 - 1e-12):
            raise ConfigurationError(f"burn-in {burn} below 3/mu = {3.0 / mu:.4g}")
        return T, burn


@dataclass
class CesaroResult:
    """Per-``z`` outcome of one batched Cesaro run."""

    mean: np.ndarray
    stderr: np.ndarray
    rounds: np.ndarray
    rounds_se: np.ndarray
    best_round: np.ndarray


def _as_covectors(model, z):
    """Scalar ``z`` values become covectors along the active mode."""
    z = np.asarray(z, dtype=float)
    if z.ndim == 0 or (z.ndim == 1 and model.n_slow != 1 and z.size != model.n_slow):
        z = np.atleast_1d(z)
        out = np.zeros((z.size, model.n_slow))
        out[:, model.active_mode] = z
        return out
    if z.ndim == 1 and model.n_slow == 1:
        return z[:, None]
    return np.atleast_2d(z)


def cesaro_batch(model, x, z_values, settings=None):
    """Cesaro estimates of the ergodic value for several ``z`` at one ``x``.

    Parameters
    ----------
    model : ModelSpec
    x : ndarray
        Frozen slow state, shape ``(n_slow,)``.
    z_values : array_like
        Scalars (along the active mode) or covectors.
    settings : ErgodicSettings

    Returns
    -------
    CesaroResult
    """
    s = settings or ErgodicSettings()
    T, burn = s.resolve(model.mu)
    zc = _as_covectors(model, z_values)
    nz, P = zc.shape[0], s.n_paths
    n_steps = int(round(T / s.dt))
    dt = T / n_steps
    k_burn = int(round(burn / dt))
    noise = noise_block(NoiseSpec(model.n_noise, s.seed, "ergodic/W2"), dt, P, n_steps)
    fast = FastStepper(model, 1.0, dt)
    modes = list(s.fast_modes)
    basis = PolynomialBasis(len(modes), s.degree)
    rows = nz * P
    xs = np.broadcast_to(np.asarray(x, dtype=float).reshape(1, -1), (rows, model.n_slow))
    z_rows = np.repeat(zc, P, axis=0)
    Gr = model.rho_table * model.G  # (|U|, n_noise)
    has_rho = bool(np.any(Gr != 0))
    window = max(1, int(round(s.window_mu / model.mu / dt)))
    coef = np.zeros((nz, basis.n_terms))
    rounds, rounds_se = [], []
    row_ids = np.arange(rows)

    for r in range(s.n_rounds + 1):
        q = np.zeros((rows, model.n_fast))
        feats = np.empty((rows, n_steps, len(modes)))
        costs = np.empty((rows, n_steps))
        coef_rows = np.repeat(coef, P, axis=0)
        for k in range(n_steps):
            b_all, l_all = model.controls(xs, q)
            vals = l_all + np.einsum("nuk,nk->nu", b_all, z_rows)
            if has_rho and r > 0:
                grad = _row_gradient(basis, q[:, modes], coef_rows, nz, P)
                full = np.zeros((rows, model.n_noise))
                full[:, modes] = grad
                vals = vals + full @ Gr.T
            idx = np.argmin(vals, axis=1)
            costs[:, k] = (l_all[row_ids, idx]
                           + np.einsum("nk,nk->n", b_all[row_ids, idx], z_rows))
            feats[:, k] = q[:, modes]
            q = fast.step(xs, q, np.tile(noise[:, k], (nz, 1)), Gr[idx])
            if not np.all(np.isfinite(q)):
                raise IntegrationDiverged(k + 1)
        per_path = costs[:, k_burn:].mean(axis=1).reshape(nz, P)
        lam = per_path.mean(axis=1)
        rounds.append(lam)
        rounds_se.append(per_path.std(axis=1, ddof=1) / np.sqrt(P))
        if not has_rho or r == s.n_rounds:
            break
        coef = _fit_relative_values(basis, feats, costs, lam, nz, P, window, s.sample_stride, dt)

    rounds = np.array(rounds)
    rounds_se = np.array(rounds_se)
    best = np.argmin(rounds, axis=0)
    cols = np.arange(nz)
    return CesaroResult(rounds[best, cols], rounds_se[best, cols], rounds, rounds_se, best)


def _row_gradient(basis, u, coef_rows, nz, P):
    grad = np.empty_like(u)
    for i in range(nz):
        sl = slice(i * P, (i + 1) * P)
        grad[sl] = basis.gradient(u[sl], coef_rows[i * P])
    return grad


def _fit_relative_values(basis, feats, costs, lam, nz, P, window, stride, dt):
    """Least-squares fit of ``w(q)`` to windowed sums of ``cost - lambda``."""
    n_steps = costs.shape[1]
    starts = np.arange(0, n_steps - window, stride)
    coef = np.zeros((nz, basis.n_terms))
    for i in range(nz):
        sl = slice(i * P, (i + 1) * P)
        c = costs[sl] - lam[i]
        csum = np.concatenate([np.zeros((P, 1)), np.cumsum(c, axis=1)], axis=1)
        y = (csum[:, starts + window] - csum[:, starts]) * dt
        u = feats[sl][:, starts].reshape(-1, feats.shape[-1])
        if i == 0:
            basis.fit_scaling(u)
        A = basis.design(u)
        coef[i], *_ = np.linalg.lstsq(A, y.reshape(-1), rcond=None)
    return coef


def grid_vi(model, x, z, n_points=201, width=5.0, tol=1e-10, max_iter=500000):
    """Ergodic value by relative value iteration on a one-mode fast grid.

    Central differences are used where they give nonnegative transition
    rates and upwind differences elsewhere.

    Raises
    ------
    UnsupportedConfiguration
        If the model has more than one fast mode.
    """
    if model.n_fast != 1:
        raise UnsupportedConfiguration("grid value iteration needs exactly one fast mode")
    beta = model.B_eigs[0]
    g = model.G[0]
    sd = abs(g) / np.sqrt(2 * abs(beta))
    qs = np.linspace(-width * sd, width * sd, n_points)
    hgrid = qs[1] - qs[0]
    zc = _as_covectors(model, z)[0]
    xs = np.broadcast_to(np.asarray(x, dtype=float).reshape(1, -1), (n_points, model.n_slow))
    q2 = qs[:, None]
    b_all, l_all = model.controls(xs, q2)
    cost = l_all + np.einsum("nuk,k->nu", b_all, zc)  # (n, |U|)
    drift = (beta * qs + model.F(xs, q2)[:, 0])[:, None] + g * model.rho_table[None, :, 0]
    diff = 0.5 * g**2 / hgrid**2
    up = diff + drift / (2 * hgrid)
    down = diff - drift / (2 * hgrid)
    bad = (up < 0) | (down < 0)
    up = np.where(bad, diff + np.maximum(drift, 0) / hgrid, up)
    down = np.where(bad, diff + np.maximum(-drift, 0) / hgrid, down)
    up[-1] = 0.0
    down[0] = 0.0
    total = up + down
    delta = 0.9 / total.max()
    p_up, p_down = up * delta, down * delta
    p_stay = 1.0 - p_up - p_down
    V = np.zeros(n_points)
    ref = n_points // 2
    lam = 0.0
    for it in range(max_iter):
        Vu = np.concatenate([V[1:], V[-1:]])
        Vd = np.concatenate([V[:1], V[:-1]])
        cand = cost * delta + p_up * Vu[:, None] + p_down * Vd[:, None] + p_stay * V[:, None]
        Tv = cand.min(axis=1)
        diffv = Tv - V
        span = diffv.max() - diffv.min()
        lam = diffv[ref] / delta
        V = Tv - Tv[ref]
        if span < tol * delta:
            break
    lam = 0.5 * (diffv.max() + diffv.min()) / delta
    return ValueEstimate(float(lam), 0.0, 0, details=dict(iterations=it + 1, span=float(span / delta)))


def estimate_lambda(model, x, z, T=None, burn_in=None, n_paths=128, solver="cesaro_policy",
                    settings=None, seed=0):
    """Ergodic value at one ``(x, z)``.

    ``x`` is a slow state or a scalar active coordinate; ``z`` a scalar along
    the active mode or a covector.  ``T`` must be at least ``10 / mu`` and
    ``burn_in`` at least ``3 / mu``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = model.embed_slow(x)[0]
    if solver == "grid_vi":
        return grid_vi(model, x, z)
    if solver != "cesaro_policy":
        raise ConfigurationError(f"unknown ergodic solver {solver!r}")
    s = settings or ErgodicSettings(n_paths=n_paths, seed=seed)
    if T is not None or burn_in is not None:
        s = ErgodicSettings(**{**asdict(s), "T": T, "burn_in": burn_in})
    res = cesaro_batch(model, x, [z] if np.ndim(z) == 0 else [np.asarray(z)], s)
    return ValueEstimate(float(res.mean[0]), float(res.stderr[0]), s.n_paths,
                         details=dict(rounds=res.rounds[:, 0].tolist(), best_round=int(res.best_round[0])))


# ---------------------------------------------------------------------- tables


def _jsonable(v):
    return v.tolist() if hasattr(v, "tolist") else str(v)


def _locate(grid, v, what):
    v = np.asarray(v, dtype=float)
    lo, hi = grid[0], grid[-1]
    span = hi - lo
    if np.any(v < lo - 1e-9 * span) or np.any(v > hi + 1e-9 * span):
        bad = v[(v < lo - 1e-9 * span) | (v > hi + 1e-9 * span)]
        raise OutOfRangeError(f"{what} query {bad.ravel()[0]:.6g} outside [{lo:.6g}, {hi:.6g}]")
    v = np.clip(v, lo, hi)
    i = np.clip(np.searchsorted(grid, v, side="right") - 1, 0, grid.size - 2)
    w = (v - grid[i]) / (grid[i + 1] - grid[i])
    return i, w


@dataclass
class GridTable:
    """Values on a rectilinear 2-D grid with bilinear interpolation.

    ``x_grid`` holds active slow coordinates; ``y_grid`` the second argument
    (``z`` for ergodic tables, ``alpha`` for transformed tables).
    """

    x_grid: np.ndarray
    y_grid: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    meta: dict = field(default_factory=dict)
    y_name = "z"

    def __post_init__(self):
        self.x_grid = np.asarray(self.x_grid, dtype=float)
        self.y_grid = np.asarray(self.y_grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        shape = (self.x_grid.size, self.y_grid.size)
        if self.values.shape != shape or self.stderr.shape != shape:
            raise ConfigurationError("table values do not match the grids")
        for g in (self.x_grid, self.y_grid):
            if g.size < 2 or np.any(np.diff(g) <= 0):
                raise ConfigurationError("grids must be strictly increasing with two or more points")

    def _interp(self, arr, x, y):
        ix, wx = _locate(self.x_grid, x, "x")
        iy, wy = _locate(self.y_grid, y, self.y_name)
        v00 = arr[ix, iy]
        v01 = arr[ix, iy + 1]
        v10 = arr[ix + 1, iy]
        v11 = arr[ix + 1, iy + 1]
        return (1 - wx) * ((1 - wy) * v00 + wy * v01) + wx * ((1 - wy) * v10 + wy * v11)

    def __call__(self, x, y):
        """Bilinear interpolation at active coordinates; no extrapolation."""
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return self._interp(self.values, x, y)

    def stderr_at(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return self._interp(self.stderr, x, y)

    def gradient(self, x, y):
        """Partial derivatives ``(d/dx, d/dy)`` of the bilinear interpolant."""
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        ix, wx = _locate(self.x_grid, x, "x")
        iy, wy = _locate(self.y_grid, y, self.y_name)
        a = self.values
        hx = self.x_grid[ix + 1] - self.x_grid[ix]
        hy = self.y_grid[iy + 1] - self.y_grid[iy]
        v00, v01, v10, v11 = a[ix, iy], a[ix, iy + 1], a[ix + 1, iy], a[ix + 1, iy + 1]
        dx = ((1 - wy) * (v10 - v00) + wy * (v11 - v01)) / hx
        dy = ((1 - wx) * (v01 - v00) + wx * (v11 - v10)) / hy
        return dx, dy

    def to_csv(self, path):
        """Rows ``x, <y_name>, value, stderr``; metadata in ``#`` comment lines."""
        with open(path, "w", newline="") as fh:
            for k in sorted(self.meta):
                fh.write(f"# {k}={json.dumps(self.meta[k], default=_jsonable)}\n")
            w = csv.writer(fh)
            w.writerow(["x", self.y_name, "value", "stderr"])
            for i, xv in enumerate(self.x_grid):
                for j, yv in enumerate(self.y_grid):
                    w.writerow([repr(float(xv)), repr(float(yv)),
                                repr(float(self.values[i, j])), repr(float(self.stderr[i, j]))])

    @classmethod
    def from_csv(cls, path):
        meta, rows = {}, []
        with open(path) as fh:
            for line in fh:
                if line.startswith("#"):
                    k, _, v = line[1:].strip().partition("=")
                    try:
                        meta[k] = json.loads(v)
                    except ValueError:
                        meta[k] = v
                elif line.strip():
                    rows.append(line)
        reader = csv.reader(rows)
        next(reader)
        data = np.array([[float(c) for c in r] for r in reader])
        xg = np.unique(data[:, 0])
        yg = np.unique(data[:, 1])
        vals = data[:, 2].reshape(xg.size, yg.size)
        se = data[:, 3].reshape(xg.size, yg.size)
        return cls(xg, yg, vals, se, meta)


class LambdaTable(GridTable):
    """Ergodic values ``lambda(x, z)`` on an (active ``x``, active ``z``) grid."""

    y_name = "z"

    @property
    def z_grid(self):
        return self.y_grid

    def evaluate(self, x, z):
        """Interpolate at full slow states and covectors (active components used)."""
        mode = int(self.meta.get("active_mode", 0))
        return self(np.asarray(x)[..., mode], np.asarray(z)[..., mode])


def build_lambda_table(model, x_grid, z_grid, settings=None, progress=None):
    """Fill a ``LambdaTable`` with Cesaro estimates, one batched run per ``x``."""
    s = settings or ErgodicSettings()
    x_grid = np.asarray(x_grid, dtype=float)
    z_grid = np.asarray(z_grid, dtype=float)
    if x_grid.size == 0 or z_grid.size == 0:
        raise ConfigurationError("lambda table grids must be nonempty")
    vals = np.empty((x_grid.size, z_grid.size))
    se = np.empty_like(vals)
    for i, xv in enumerate(x_grid):
        res = cesaro_batch(model, model.embed_slow(xv)[0], z_grid, s)
        vals[i], se[i] = res.mean, res.stderr
        if progress:
            progress(i, x_grid.size)
    T, burn = s.resolve(model.mu)
    meta = dict(T=T, burn_in=burn, n_paths=s.n_paths, dt=s.dt, n_rounds=s.n_rounds,
                policy_class=f"greedy-relative-value-poly{s.degree}-modes{list(s.fast_modes)}",
                seed=s.seed, model=model.fast_fingerprint(), active_mode=model.active_mode)
    return LambdaTable(x_grid, z_grid, vals, se, meta)


# ----------------------------------------------------------------------- audit


@dataclass
class PropertyCheck:
    passed: bool
    worst: float
    violations: list


@dataclass
class AuditReport:
    """Pass/fail per property; ``worst`` is the largest excess over the bound."""

    checks: dict

    @property
    def passed(self):
        return all(c.passed for c in self.checks.values())

    def flagged_cells(self):
        """Cells involved in the largest number of violations."""
        counts = {}
        for c in self.checks.values():
            for cells in c.violations:
                for cell in cells:
                    counts[cell] = counts.get(cell, 0) + 1
        if not counts:
            return []
        top = max(counts.values())
        return sorted(k for k, v in counts.items() if v == top)

    def lines(self):
        return [f"{'PASS' if c.passed else 'FAIL'} {k}: worst excess {c.worst:.3g}, "
                f"{len(c.violations)} violations" for k, c in self.checks.items()]


def lambda_property_audit(table, M, L, slack=3.0):
    """Check the Lipschitz, growth and concavity properties of a table.

    Every comparison allows ``slack`` times the combined standard error of
    the cells involved.
    """
    v, se = table.values, table.stderr
    xg, zg = table.x_grid, table.z_grid
    nx, nz = v.shape
    checks = {}

    # Lipschitz in z, all pairs on each x-line
    i, j = np.triu_indices(nz, 1)
    excess = (np.abs(v[:, i] - v[:, j]) - M * np.abs(zg[i] - zg[j])
              - slack * np.hypot(se[:, i], se[:, j]))
    checks["lipschitz_z"] = _collect(excess, lambda a, b: ((a, i[b]), (a, j[b])))

    # Lipschitz in x, all pairs on each z-line
    i, j = np.triu_indices(nx, 1)
    excess = (np.abs(v[i, :] - v[j, :]) - L * (1 + np.abs(zg))[None, :] * np.abs(xg[i] - xg[j])[:, None]
              - slack * np.hypot(se[i, :], se[j, :]))
    checks["lipschitz_x"] = _collect(excess, lambda a, b: ((i[a], b), (j[a], b)))

    excess = np.abs(v) - M * (1 + np.abs(zg))[None, :] - slack * se
    checks["growth"] = _collect(excess, lambda a, b: ((a, b),))

    # concavity: middle value above the chord through its neighbours
    if nz >= 3:
        w = (zg[2:] - zg[1:-1]) / (zg[2:] - zg[:-2])
        chord = w * v[:, :-2] + (1 - w) * v[:, 2:]
        comb = np.sqrt(se[:, 1:-1] ** 2 + (w * se[:, :-2]) ** 2 + ((1 - w) * se[:, 2:]) ** 2)
        excess = chord - v[:, 1:-1] - slack * comb
        checks["concavity_z"] = _collect(excess, lambda a, b: ((a, b + 1),))
    else:
        checks["concavity_z"] = PropertyCheck(True, -np.inf, [])
    return AuditReport(checks)


def _collect(excess, cells_of):
    bad = np.argwhere(excess > ROUNDING)
    worst = float(excess.max()) if excess.size else -np.inf
    violations = [tuple((int(r), int(c)) for r, c in cells_of(a, b)) for a, b in bad]
    return PropertyCheck(bad.size == 0, worst, violations)
