"""Regression Monte Carlo for the value BSDEs and policy-based value estimates.

Backward scheme on a stored forward cloud, step ``k = N-1, ..., 0``:

* the smooth one-step target ``Yhat_{k+1}(X_{k+1})`` is regressed on the
  basis at ``X_k`` together with the noise increments of step ``k`` (each
  times ``(1, standardized linear features)``); the increment coefficients
  give the martingale integrands ``Z``;
* the multistep target ``Ypath_{k+1}`` is regressed on the same design; its
  basis part is the conditional expectation and
  ``Yhat_k = E_k[Ypath_{k+1}] + f(X_k, Z_k) dt``;
* ``Ypath_k = Ypath_{k+1} + f dt - Z . dN`` so that ``Ypath_0`` is an
  unbiased-given-Z pathwise estimator of ``Y_0`` whose spread gives the
  standard error.
"""

from dataclasses import dataclass, field
import hashlib
import json

import numpy as np

from twoscale.basis import PolynomialBasis
from twoscale.dynamics import (
    TwoScaleParams, pair_noise, reduced_noise, simulate_pair, simulate_reduced,
)
from twoscale.errors import BasisDegeneracyError, OutOfRangeError
from twoscale.estimates import ValueEstimate
from twoscale.hamiltonian import greedy_policy, psi_scaled_batch

LIMIT_DT = 0.02


@dataclass
class RegressionBasis:
    """Polynomial features of selected slow and fast modes.

    ``z_slow_modes`` and ``z_fast_modes`` select the noise components whose
    integrands are estimated; ``None`` means the active slow mode and all
    fast modes.  With ``interact`` each noise increment also multiplies the
    standardized linear features.
    """

    slow_modes: tuple = (0, 1)
    fast_modes: tuple = (0,)
    degree: int = 2
    z_slow_modes: tuple = None
    z_fast_modes: tuple = None
    interact: bool = True

    def raw(self, x, q=None):
        cols = [x[:, [m for m in self.slow_modes if m < x.shape[1]]]]
        if q is not None and self.fast_modes:
            cols.append(q[:, [m for m in self.fast_modes if m < q.shape[1]]])
        return np.concatenate(cols, axis=1)

    def descriptor(self):
        return json.dumps(self.__dict__, sort_keys=True, default=list)


@dataclass
class BsdeSolution:
    """Backward solution on the forward cloud.

    ``Y`` holds ``Yhat_k`` per path and step (``Y[:, -1] = h(X_1)``).
    ``Z1``, ``Z2`` and ``Xi`` hold integrands against ``W1``, ``B`` and
    ``W2`` (zeros for components not estimated).
    """

    times: np.ndarray
    Y: np.ndarray
    Z1: np.ndarray
    Z2: np.ndarray
    Xi: np.ndarray
    Y0: ValueEstimate
    basis: str
    n_paths: int
    X: np.ndarray = None
    Q: np.ndarray = None
    terminal: np.ndarray = None
    fits: list = field(default_factory=list, repr=False)

    def z2_field(self):
        return _field_from_fits(self, "Z2")

    def xi_field(self):
        return _field_from_fits(self, "Xi")


@dataclass
class _StepFit:
    poly: PolynomialBasis
    coef: dict


def _field_from_fits(sol, which):
    dt = sol.times[1] - sol.times[0]
    n_steps = len(sol.fits)

    def fieldf(t, x, q):
        k = min(max(int(t / dt + 1e-9), 0), n_steps - 1)
        fit = sol.fits[k]
        raw = fit.basis.raw(x, q)
        lin = np.concatenate([np.ones((x.shape[0], 1)),
                              (raw - fit.poly.center) / fit.poly.scale], axis=1)
        out = np.zeros((x.shape[0], fit.dims[which]))
        for comp, c in fit.coef.get(which, {}).items():
            out[:, comp] = lin[:, : c.size] @ c
        return out

    return fieldf


def _noise_columns(streams, k, lin, interact):
    """Design columns ``dN_j * (1, lin)`` and their layout."""
    cols, layout = [], []
    width = lin.shape[1] if interact else 1
    for name, arr, comps in streams:
        for c in comps:
            inc = arr[:, k, c]
            cols.append(inc[:, None] * lin[:, :width])
            layout.append((name, c, width))
    return (np.concatenate(cols, axis=1) if cols else np.zeros((lin.shape[0], 0))), layout


def _solve_design(D, targets, step):
    """Least squares after dropping zero columns; raises on rank deficiency."""
    norms = np.sqrt(np.mean(D**2, axis=0))
    keep = norms > 1e-12 * max(1.0, norms.max())
    Dk = D[:, keep] / norms[keep]
    coef_k, _, rank, _ = np.linalg.lstsq(Dk, targets, rcond=None)
    if rank < Dk.shape[1]:
        raise BasisDegeneracyError(f"regression design rank deficient at step {step}")
    coef = np.zeros((D.shape[1],) + targets.shape[1:])
    coef[keep] = coef_k / (norms[keep][:, None] if coef_k.ndim > 1 else norms[keep])
    return coef


def _backward(times, X, Q, terminal, streams, driver, basis, dims, keep_fits=False):
    """Shared backward induction; see the module docstring."""
    n, N = X.shape[0], X.shape[1] - 1
    dt = times[1] - times[0]
    Y = np.empty((n, N + 1))
    Y[:, N] = terminal
    Zs = {name: np.zeros((n, N, dims[name])) for name in dims}
    ypath = terminal.copy()
    arrays = {name: arr for name, arr, _ in streams}
    yhat_next = terminal.copy()
    fits = [None] * N
    for k in range(N - 1, -1, -1):
        raw = basis.raw(X[:, k], None if Q is None else Q[:, k])
        poly = PolynomialBasis(raw.shape[1], basis.degree).fit_scaling(raw)
        phi = poly.design(raw)
        lin = np.concatenate([np.ones((n, 1)), (raw - poly.center) / poly.scale], axis=1)
        ncols, layout = _noise_columns(streams, k, lin, basis.interact)
        D = np.concatenate([phi, ncols], axis=1)
        coef = _solve_design(D, np.stack([yhat_next, ypath], axis=1), k)
        c_one, c_multi = coef[:, 0], coef[:, 1]
        off = phi.shape[1]
        zdot = np.zeros(n)
        coef_store = {}
        for name, comp, width in layout:
            c = c_one[off: off + width]
            off += width
            z = lin[:, :width] @ c
            Zs[name][:, k, comp] = z
            coef_store.setdefault(name, {})[comp] = c
            zdot += z * arrays[name][:, k, comp]
        f = driver(k, X[:, k], None if Q is None else Q[:, k], {nm: Zs[nm][:, k] for nm in Zs})
        cond = phi @ c_multi[: phi.shape[1]]
        yhat_next = cond + f * dt
        Y[:, k] = yhat_next
        ypath = ypath + f * dt - zdot
        if keep_fits:
            fit = _StepFit(poly, coef_store)
            fit.basis = basis
            fit.dims = dims
            fits[k] = fit
    return Y, Zs, ypath, fits


def _fingerprint(*parts):
    text = json.dumps(parts, sort_keys=True, default=str)
    return hashlib.sha1(text.encode()).hexdigest()[:12]


def solve_full_bsde(model, epsilon, eta, n_paths=2000, basis=None, seed=0, dt=None,
                    keep_fits=True):
    """Regularized value BSDE on the uncontrolled two-scale cloud.

    Driver ``psi(x, q, Z2 / eta, Xi / sqrt(eps))``.  Requires ``eps, eta > 0``.
    """
    if epsilon <= 0 or eta <= 0:
        raise ValueError("the regularized BSDE needs epsilon > 0 and eta > 0")
    basis = basis or RegressionBasis()
    params = TwoScaleParams(epsilon, eta, dt)
    bundle = simulate_pair(model, params, None, n_paths, seed, prefix="bsde/")
    am = model.active_mode
    zs = basis.z_slow_modes if basis.z_slow_modes is not None else (am,)
    zf = basis.z_fast_modes if basis.z_fast_modes is not None else tuple(range(model.n_noise))
    streams = [("Z1", bundle.dW1, zs), ("Z2", bundle.dB, zs), ("Xi", bundle.dW2, zf)]
    dims = {"Z1": model.n_slow, "Z2": model.n_slow, "Xi": model.n_noise}

    def driver(k, x, q, Z):
        return psi_scaled_batch(model, epsilon, eta, x, q, Z["Z2"], Z["Xi"]).value

    terminal = model.h(bundle.X[:, -1])
    Y, Zs, ypath, fits = _backward(bundle.times, bundle.X, bundle.Q, terminal, streams,
                                   driver, basis, dims, keep_fits)
    fp = _fingerprint(model.fingerprint(), "full", epsilon, eta, n_paths, seed, params.dt,
                      basis.descriptor())
    y0 = ValueEstimate.from_samples(ypath, fp)
    return BsdeSolution(bundle.times, Y, Zs["Z1"], Zs["Z2"], Zs["Xi"], y0, basis.descriptor(),
                        n_paths, bundle.X, bundle.Q, terminal, fits)


def solve_limit_bsde(model, eta, lambda_table, n_paths=2000, basis=None, seed=0, dt=LIMIT_DT,
                     keep_fits=False):
    """Limit BSDE with driver ``lambda(X, Z2 / eta)`` on the slow-only cloud.

    The forward cloud solves ``dX = AX dt + R(X) dW1 + eta dB``.

    Raises
    ------
    OutOfRangeError
        If some ``Z2 / eta`` leaves the table; the message names the step and
        the fraction of paths outside.
    """
    if eta <= 0:
        raise ValueError("the limit BSDE needs eta > 0")
    basis = basis or RegressionBasis(fast_modes=())
    noise = reduced_noise(model, dt, n_paths, seed, prefix="limit/")
    paths = simulate_reduced(model, eta, None, dt, noise=noise)
    dW1, dB = noise
    am = model.active_mode
    zs = basis.z_slow_modes if basis.z_slow_modes is not None else (am,)
    streams = [("Z2", dB, zs)]
    if not model.R_zero:
        streams.insert(0, ("Z1", dW1, zs))
    dims = {"Z1": model.n_slow, "Z2": model.n_slow}
    zmax = lambda_table.z_grid

    def driver(k, x, q, Z):
        z = Z["Z2"][:, am] / eta
        try:
            return lambda_table(x[:, am], z)
        except OutOfRangeError as exc:
            frac = np.mean((z < zmax[0]) | (z > zmax[-1]))
            raise OutOfRangeError(
                f"step {k}: {frac:.2%} of Z2/eta outside the table ({exc})") from exc

    terminal = model.h(paths.X[:, -1])
    times = paths.times
    Y, Zs, ypath, fits = _backward(times, paths.X, None, terminal, streams, driver, basis,
                                   dims, keep_fits)
    fp = _fingerprint(model.fingerprint(), "limit", eta, n_paths, seed, dt, basis.descriptor(),
                      lambda_table.meta)
    y0 = ValueEstimate.from_samples(ypath, fp)
    return BsdeSolution(times, Y, Zs.get("Z1"), Zs["Z2"], None, y0, basis.descriptor(), n_paths,
                        paths.X, None, terminal, fits)


# ------------------------------------------------------------------- policies


def value_by_policy(model, epsilon, eta, policy, n_paths=2000, seed=0, dt=None, antithetic=False,
                    x0=None, q0=None, prefix="eval/"):
    """Average realized cost of a feedback policy under the controlled dynamics.

    With ``antithetic`` the ``B`` increments come in opposite pairs and the
    standard error is computed from pair means (also at ``eta = 0``, so that
    per-path costs line up across ``eta``).
    """
    params = TwoScaleParams(epsilon, eta, dt, x0=x0, q0=q0)
    bundle = simulate_pair(model, params, policy, n_paths, seed, store=False,
                           antithetic=antithetic, prefix=prefix)
    cost = bundle.cost()
    if antithetic:
        cost = 0.5 * (cost[0::2] + cost[1::2])
    fp = _fingerprint(model.fingerprint(), "policy", epsilon, eta, n_paths, seed, params.dt)
    return ValueEstimate.from_samples(cost, fp, path_costs=cost)


@dataclass
class ValueGradientField:
    """Per-step regression of the cost-to-go and its gradients."""

    dt: float
    basis: RegressionBasis
    polys: list
    coefs: list
    n_slow: int
    n_fast: int

    def _grad(self, t, x, q):
        k = min(max(int(t / self.dt + 1e-9), 0), len(self.coefs) - 1)
        raw = self.basis.raw(x, q)
        return self.polys[k].gradient(raw, self.coefs[k])

    def slow(self, t, x, q):
        g = self._grad(t, x, q)
        out = np.zeros((x.shape[0], self.n_slow))
        sm = [m for m in self.basis.slow_modes if m < self.n_slow]
        out[:, sm] = g[:, : len(sm)]
        return out

    def fast(self, t, x, q):
        g = self._grad(t, x, q)
        out = np.zeros((x.shape[0], self.n_fast))
        sm = [m for m in self.basis.slow_modes if m < self.n_slow]
        fm = [m for m in self.basis.fast_modes if m < self.n_fast]
        out[:, fm] = g[:, len(sm): len(sm) + len(fm)]
        return out


def fit_cost_to_go(model, params, bundle, basis):
    """Regress ``sum_{j >= k} l_j dt + h(X_1)`` on the basis at every step."""
    # running cost per step was accumulated; recover it from stored controls
    n, N = bundle.u.shape
    rows = np.arange(n)
    step_cost = np.empty((n, N))
    for k in range(N):
        _, l_all = model.controls(bundle.X[:, k], bundle.Q[:, k])
        step_cost[:, k] = l_all[rows, bundle.u[:, k]] * params.dt
    togo = bundle.terminal_cost[:, None] + np.cumsum(step_cost[:, ::-1], axis=1)[:, ::-1]
    polys, coefs = [], []
    for k in range(N):
        raw = basis.raw(bundle.X[:, k], bundle.Q[:, k])
        poly = PolynomialBasis(raw.shape[1], basis.degree).fit_scaling(raw)
        D = poly.design(raw)
        coefs.append(_solve_design(D, togo[:, k], k))
        polys.append(poly)
    return ValueGradientField(params.dt, basis, polys, coefs, model.n_slow, model.n_fast)


def gradient_policy(model, epsilon, field_, use_fast=True):
    """Greedy feedback for ``l + grad_x w . b + grad_q w . G rho / eps``."""
    v_field = None
    if use_fast and np.any(model.rho_table != 0):
        v_field = lambda t, x, q: field_.fast(t, x, q) * model.G / epsilon
    return greedy_policy(model, 1.0, 1.0, field_.slow, v_field)


def myopic_policy(model):
    """Feedback minimizing the running cost alone."""
    return greedy_policy(model, 1.0, 1.0)


def improve_policies(model, epsilon, eta, n_rounds=3, n_train=1000, seed=0, dt=None,
                     basis=None, train_spread=0.3, use_fast=True):
    """Policy-improvement sequence starting from the myopic policy.

    Each round simulates the current policy from initial slow states spread
    around ``x0`` along the active mode, fits the cost-to-go and takes the
    greedy feedback for its gradient.
    """
    basis = basis or RegressionBasis()
    policies = [myopic_policy(model)]
    rng = np.random.default_rng([seed, 7])
    x0 = np.tile(model.x0, (n_train, 1))
    x0[:, model.active_mode] += train_spread * rng.standard_normal(n_train)
    params = TwoScaleParams(epsilon, eta, dt, x0=x0)
    for r in range(n_rounds):
        bundle = simulate_pair(model, params, policies[-1], n_train, seed + 1000 * (r + 1),
                               prefix="train/")
        field_ = fit_cost_to_go(model, params, bundle, basis)
        policies.append(gradient_policy(model, epsilon, field_, use_fast))
        del bundle
    return policies


def estimate_V(model, epsilon, eta, n_paths=2000, n_policy_rounds=3, seed=0, dt=None,
               policies=None, antithetic=False, n_train=1000, basis=None, cross_check=False,
               x0=None, use_fast=True):
    """Least policy value over an improvement sequence (and any given policies).

    Candidates are evaluated on common random numbers, so differences between
    candidates are not blurred by sampling noise.  With ``cross_check`` and
    ``eta > 0`` the regularized BSDE is solved as well and its ``Y_0`` is
    attached under ``details["bsde"]``.
    """
    cands = list(policies) if policies is not None else []
    if policies is None or n_policy_rounds > 0:
        if policies is None:
            cands = []
        cands += improve_policies(model, epsilon, eta, n_policy_rounds, n_train, seed + 17, dt,
                                  basis, use_fast=use_fast)
    values = [value_by_policy(model, epsilon, eta, p, n_paths, seed, dt, antithetic, x0=x0)
              for p in cands]
    best = int(np.argmin([v.mean for v in values]))
    fp = _fingerprint(model.fingerprint(), "V", epsilon, eta, n_paths, n_policy_rounds, seed,
                      TwoScaleParams(epsilon, eta, dt).dt)
    out = ValueEstimate(values[best].mean, values[best].stderr, values[best].n, fp,
                        dict(round_values=[v.mean for v in values], best=best, policies=cands,
                             path_costs=values[best].details["path_costs"]))
    if cross_check and eta > 0:
        out.details["bsde"] = solve_full_bsde(model, epsilon, eta, n_paths, basis, seed, dt,
                                              keep_fits=False).Y0
    return out
