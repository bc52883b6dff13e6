"""Truncated ergodic value, its concave conjugate and the Fenchel recovery.

With ``cap(z) = kappa - (M + 1)|z|`` the truncation is
``tilde(x, z) = min(lambda(x, z), cap(z))``.  Because ``|lambda| <= M(1 + |z|)``
it equals ``lambda`` for ``|z| <= (kappa - M) / (2M + 1)`` and ``cap`` for
``|z| >= kappa + M``, so the table of ``lambda`` is only needed inside the
second radius.  The conjugate ``star(x, a) = inf_z -z a - tilde(x, z)`` is
finite exactly on ``|a| <= M + 1`` and ``tilde`` is recovered as
``inf_{|a| <= M + 1} -z a - star(x, a)``.
"""

from dataclasses import dataclass
import warnings

import numpy as np

from twoscale.ergodic import GridTable, _locate
from twoscale.errors import ConfigurationError, InvariantViolation
from twoscale.estimates import ValueEstimate

NEG_INF = -np.inf
A_MIN = 0.1
SAFETY = 1.5


@dataclass(frozen=True)
class TruncationParams:
    """Constants of the truncation: bound ``M``, cap level ``kappa`` and gradient bound ``a``."""

    M: float
    kappa: float
    a: float

    def __post_init__(self):
        if not self.kappa > self.M:
            raise ConfigurationError("kappa must exceed M")
        if not (self.kappa - self.M) / (2 * self.M + 1) > self.a:
            raise ConfigurationError("need (kappa - M) / (2M + 1) > a")

    @property
    def identity_radius(self):
        """``|z|`` below which the truncation leaves ``lambda`` unchanged."""
        return (self.kappa - self.M) / (2 * self.M + 1)

    @property
    def cap_radius(self):
        """``|z|`` above which the truncation equals the cap."""
        return self.kappa + self.M

    @property
    def alpha_radius(self):
        return self.M + 1

    def cap(self, z):
        return self.kappa - (self.M + 1) * np.abs(z)


def tilde_lambda(lambda_eval, params, x, z):
    """``min(lambda(x, z), kappa - (M + 1)|z|)``, vectorized over ``z``.

    ``lambda_eval(x, z)`` is only called where ``|z| < kappa + M``; outside
    that radius the cap is returned directly.
    """
    z = np.asarray(z, dtype=float)
    x = np.broadcast_to(np.asarray(x, dtype=float), z.shape)
    out = params.cap(z)
    inner = np.abs(z) < params.cap_radius
    if np.any(inner):
        out = np.array(out, dtype=float, copy=True)
        lam = np.asarray(lambda_eval(x[inner], z[inner]), dtype=float)
        out[inner] = np.minimum(lam, out[inner])
    return out[()] if out.ndim == 0 else out


def legendre_star(tilde_eval, x, alpha, z_search_radius, M=None, n_z=2001, max_doublings=3,
                  alpha_radius=None):
    """Concave conjugate ``inf_z -z alpha - tilde(x, z)`` by grid search.

    Parameters
    ----------
    tilde_eval : callable
        ``tilde_eval(x, z)`` vectorized over ``z``.
    alpha : float
        Active component of the argument.
    z_search_radius : float
        Initial half-width of the ``z`` grid; doubled (with a warning) while
        the minimum sits strictly on the boundary.
    M : float
        Bound constant; ``|alpha| > M + 1`` returns ``NEG_INF`` without search.
    """
    radius_alpha = alpha_radius if alpha_radius is not None else (M + 1 if M is not None else np.inf)
    if abs(alpha) > radius_alpha:
        return NEG_INF
    R = float(z_search_radius)
    for attempt in range(max_doublings + 1):
        z = np.linspace(-R, R, n_z)
        obj = -z * alpha - tilde_eval(np.full_like(z, x, dtype=float) if np.ndim(x) == 0 else x, z)
        i = int(np.argmin(obj))
        interior_min = obj[1:-1].min()
        if 0 < i < n_z - 1 or obj[i] >= interior_min - 1e-12 * (1 + abs(interior_min)):
            return float(obj[i])
        if attempt < max_doublings:
            warnings.warn(f"conjugate minimum on the search boundary at radius {R}; doubling")
            R *= 2
    raise ConfigurationError("conjugate search did not find an interior minimum")


class LegendreTable(GridTable):
    """Values of the conjugate on an (active ``x``, ``alpha``) grid.

    Queries with ``|alpha| > M + 1`` return ``NEG_INF``; queries outside the
    ``x`` grid raise.
    """

    y_name = "alpha"

    @property
    def alpha_grid(self):
        return self.y_grid

    @property
    def radius(self):
        return float(self.meta.get("alpha_radius", self.y_grid[-1]))

    def __call__(self, x, alpha):
        x, alpha = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(alpha, dtype=float))
        outside = np.abs(alpha) > self.radius * (1 + 1e-12)
        if not np.any(outside):
            return self._interp(self.values, x, alpha)
        out = np.full(alpha.shape, NEG_INF)
        inside = ~outside
        out[inside] = self._interp(self.values, x[inside], alpha[inside])
        return out

    def row(self, x):
        """Conjugate values on the whole ``alpha`` grid at one ``x`` (linear in ``x``)."""
        i, w = _locate(self.x_grid, np.asarray(float(x)), "x")
        return (1 - w) * self.values[i] + w * self.values[i + 1]


def tilde_on_grid(lambda_table, params, z_grid):
    """Truncated values and standard errors on ``(lambda_table.x_grid, z_grid)``."""
    X, Z = np.meshgrid(lambda_table.x_grid, z_grid, indexing="ij")
    vals = tilde_lambda(lambda_table, params, X, Z)
    se = np.zeros_like(vals)
    inner = np.abs(Z) < params.cap_radius
    lam = lambda_table(X[inner], Z[inner])
    use_lam = lam <= params.cap(Z[inner])
    se_inner = np.where(use_lam, lambda_table.stderr_at(X[inner], Z[inner]), 0.0)
    se[inner] = se_inner
    return vals, se


def conjugate_rows(z_grid, tilde_rows, alpha_grid):
    """Grid conjugate ``min_z -z a - tilde`` for each row; returns values and argmin indices."""
    obj = -np.multiply.outer(alpha_grid, z_grid)[None] - tilde_rows[:, None, :]
    idx = np.argmin(obj, axis=-1)
    return np.take_along_axis(obj, idx[..., None], -1)[..., 0], idx


def build_legendre_table(lambda_table, params, n_alpha=4001, n_z=201):
    """Conjugate of the truncated table on a uniform ``alpha`` grid of the ball.

    ``tilde`` is sampled on ``n_z`` equispaced points of ``|z| <= kappa + M``
    (the table's ``z`` grid must cover that interval).  A minimizer on the
    boundary of the ``z`` grid is only accepted as a tie.
    """
    zg = lambda_table.z_grid
    if zg[0] > -params.cap_radius + 1e-9 or zg[-1] < params.cap_radius - 1e-9:
        raise ConfigurationError(
            f"lambda table z range [{zg[0]:.4g}, {zg[-1]:.4g}] does not cover |z| <= {params.cap_radius:.4g}"
        )
    z_grid = np.linspace(-params.cap_radius, params.cap_radius, n_z)
    alpha_grid = np.linspace(-params.alpha_radius, params.alpha_radius, n_alpha)
    tilde, tilde_se = tilde_on_grid(lambda_table, params, z_grid)
    vals, idx = conjugate_rows(z_grid, tilde, alpha_grid)
    se = np.take_along_axis(tilde_se, idx, axis=1)
    meta = dict(lambda_table.meta)
    meta.update(kappa=params.kappa, a=params.a, M=params.M, alpha_radius=params.alpha_radius, n_z=n_z)
    return LegendreTable(lambda_table.x_grid, alpha_grid, vals, se, meta)


def fenchel_recover(legendre_table, x, z):
    """``min_{alpha on grid} -z alpha - star(x, alpha)``, vectorized over ``z``."""
    row = legendre_table.row(x)
    z = np.asarray(z, dtype=float)
    obj = -np.multiply.outer(z, legendre_table.alpha_grid) - row
    return obj.min(axis=-1)


def choose_kappa(model, eta_grid, lipschitz_estimate, safety=SAFETY, a_min=A_MIN):
    """Truncation constants from an estimated Lipschitz constant of the limit value.

    ``a = max(safety * estimate, a_min)`` and ``kappa = M + (2M + 1) 2a``.

    Raises
    ------
    ConfigurationError
        If the estimate is based on zero samples or is not finite.
    """
    if isinstance(lipschitz_estimate, ValueEstimate):
        if lipschitz_estimate.n == 0:
            raise ConfigurationError("Lipschitz estimate is based on zero paths")
        lip = lipschitz_estimate.mean
    else:
        lip = float(lipschitz_estimate)
    if not np.isfinite(lip) or lip < 0:
        raise ConfigurationError(f"invalid Lipschitz estimate {lip}")
    a = max(safety * lip, a_min)
    M = model.M if hasattr(model, "M") else float(model)
    return TruncationParams(M=M, kappa=M + (2 * M + 1) * 2 * a, a=a)


def containment_fraction(z_samples, params):
    """Fraction of ``|z|`` samples inside the region where the truncation is inactive."""
    z = np.abs(np.asarray(z_samples, dtype=float)).ravel()
    return float(np.mean(z <= params.identity_radius)) if z.size else 1.0


# ----------------------------------------------------------------------- audit


def round_trip_error(legendre_table, lambda_table, params, n_z=201, slack=3.0):
    """Worst excess of ``|recover(star(tilde)) - tilde|`` over ``slack * stderr``.

    Returns ``(max_abs_error, worst_excess_over_slack, z_grid)`` where the
    excess is ``|err| - slack * stderr`` maximized over the grid.
    """
    z_grid = np.linspace(-params.cap_radius, params.cap_radius, n_z)
    tilde, se = tilde_on_grid(lambda_table, params, z_grid)
    errs = np.empty_like(tilde)
    for i, xv in enumerate(lambda_table.x_grid):
        errs[i] = fenchel_recover(legendre_table, xv, z_grid) - tilde[i]
    return float(np.abs(errs).max()), float((np.abs(errs) - slack * se).max()), errs


def legendre_property_audit(lambda_table, legendre_table, params, L, slack=3.0, tol=0.05):
    """Lipschitz, concavity and region checks of the truncation and its conjugate.

    Returns a dict ``name -> (passed, measured, bound)``.
    """
    zg = np.linspace(-params.cap_radius, params.cap_radius, 201)
    xg = lambda_table.x_grid
    tilde, se = tilde_on_grid(lambda_table, params, zg)
    checks = {}
    dz = np.abs(np.diff(tilde, axis=1)) - slack * np.hypot(se[:, 1:], se[:, :-1])
    checks["tilde_lipschitz_z"] = _ratio_check((dz / np.diff(zg)).max(), params.M + 1)
    Lt = L * (1 + params.kappa + params.M)
    dx = np.abs(np.diff(tilde, axis=0)) - slack * np.hypot(se[1:], se[:-1])
    checks["tilde_lipschitz_x"] = _ratio_check((dx / np.diff(xg)[:, None]).max(), Lt * (1 + tol))
    sv, sse = legendre_table.values, legendre_table.stderr
    dxs = np.abs(np.diff(sv, axis=0)) - slack * np.hypot(sse[1:], sse[:-1])
    checks["star_lipschitz_x"] = _ratio_check((dxs / np.diff(xg)[:, None]).max(), Lt * (1 + tol))
    second = sv[:, 2:] - 2 * sv[:, 1:-1] + sv[:, :-2]
    checks["star_concave_alpha"] = _ratio_check(second.max(), 1e-12)
    inner = np.abs(zg) <= params.identity_radius
    X, Z = np.meshgrid(xg, zg[inner], indexing="ij")
    diff = np.abs(tilde[:, inner] - lambda_table(X, Z)).max() if inner.any() else 0.0
    checks["identity_region"] = _ratio_check(diff, 0.0)
    return checks


def _ratio_check(measured, bound):
    return (bool(measured <= bound + 1e-12), float(measured), float(bound))
