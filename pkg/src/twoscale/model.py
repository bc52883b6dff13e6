"""Problem coefficients, hypothesis validators and built-in presets.

Coefficient callables are vectorized over a leading batch axis: ``x`` has
shape ``(n, n_slow)``, ``q`` has shape ``(n, n_fast)`` and a control ``u`` is
an array of control values of shape ``(n,)`` (scalar control sets) or
``(n, d_u)``.  Every preset depends on the slow state only through its first
mode ``x[:, 0]``, and ``b`` always points along that mode; the modules that
tabulate functions of ``(x, z)`` rely on this through ``active_mode``.
"""

from dataclasses import dataclass, field
import hashlib
import json

import numpy as np

from twoscale.errors import ConfigurationError
from twoscale.spectral import DiagonalSemigroup, SineBasis, fit_hs_constant, laplacian_eigenvalues


@dataclass
class ModelSpec:
    """All coefficients of the controlled two-scale system.

    Parameters
    ----------
    name : str
        Preset or user label, part of the fingerprint.
    A_eigs, B_eigs : ndarray
        Eigenvalues of the slow and fast generators.
    b : callable
        ``b(x, q, u) -> (n, n_slow)`` controlled slow drift.
    F : callable
        ``F(x, q) -> (n, n_fast)`` fast nonlinearity.
    R : callable
        ``R(x) -> (n, n_slow)`` per-mode multipliers of the slow noise.
    G : ndarray
        Per-mode multipliers of the fast noise, length ``n_noise``.
    rho : callable
        ``rho(u) -> (n_noise,)`` for a single control value.
    l : callable
        ``l(x, q, u) -> (n,)`` running cost.
    h : callable
        ``h(x) -> (n,)`` terminal cost.
    U : ndarray
        Finite control set, one control value per row.
    M, L, mu, gamma : float
        Bound, Lipschitz constant, dissipativity margin and smoothing exponent.
    x0, q0 : ndarray
        Initial slow and fast states.
    params : dict
        Scalar parameters used to build the model (fingerprinted).
    fast_keys : tuple of str
        Keys of ``params`` that the frozen fast problem depends on.
    control_table : callable, optional
        ``control_table(x, q) -> (b_all, l_all)`` with shapes
        ``(n, |U|, n_slow)`` and ``(n, |U|)``.  Defaults to looping over U.
    """

    name: str
    A_eigs: np.ndarray
    B_eigs: np.ndarray
    b: object
    F: object
    R: object
    G: np.ndarray
    rho: object
    l: object
    h: object
    U: np.ndarray
    M: float
    L: float
    mu: float
    gamma: float
    x0: np.ndarray
    q0: np.ndarray
    params: dict = field(default_factory=dict)
    fast_keys: tuple = ()
    control_table: object = None
    active_mode: int = 0
    R_zero: bool = False

    def __post_init__(self):
        self.A_eigs = np.asarray(self.A_eigs, dtype=float)
        self.B_eigs = np.asarray(self.B_eigs, dtype=float)
        self.G = np.asarray(self.G, dtype=float)
        self.U = np.asarray(self.U, dtype=float)
        self.x0 = np.asarray(self.x0, dtype=float)
        self.q0 = np.asarray(self.q0, dtype=float)
        if self.U.shape[0] == 0:
            raise ConfigurationError("control set U is empty")
        if self.G.size != self.n_fast:
            raise ConfigurationError("G must have one multiplier per fast mode")
        if self.x0.size != self.n_slow or self.q0.size != self.n_fast:
            raise ConfigurationError("initial states do not match the truncation")
        self.rho_table = np.array([np.asarray(self.rho(u), dtype=float) for u in self.U])
        if self.rho_table.shape != (self.n_controls, self.n_noise):
            raise ConfigurationError("rho must map a control to an n_noise vector")
        self.sgA = DiagonalSemigroup(self.A_eigs, "A")
        self.sgB = DiagonalSemigroup(self.B_eigs, "B")

    @property
    def n_slow(self):
        return self.A_eigs.size

    @property
    def n_fast(self):
        return self.B_eigs.size

    @property
    def n_noise(self):
        return self.G.size

    @property
    def n_controls(self):
        return self.U.shape[0]

    def controls(self, x, q):
        """Drift and running cost for every control: ``(b_all, l_all)``."""
        if self.control_table is not None:
            return self.control_table(x, q)
        n = x.shape[0]
        b_all = np.empty((n, self.n_controls, self.n_slow))
        l_all = np.empty((n, self.n_controls))
        for j, u in enumerate(self.U):
            uu = np.broadcast_to(u, (n,) + u.shape)
            b_all[:, j] = self.b(x, q, uu)
            l_all[:, j] = self.l(x, q, uu)
        return b_all, l_all

    def embed_slow(self, coord):
        """Slow states with ``coord`` in the active mode and zeros elsewhere."""
        coord = np.atleast_1d(np.asarray(coord, dtype=float))
        x = np.zeros((coord.size, self.n_slow))
        x[:, self.active_mode] = coord
        return x

    def fingerprint(self):
        """Short hash identifying the model."""
        return _hash({"name": self.name, **self.params})

    def fast_fingerprint(self):
        """Hash of the parameters the frozen fast problem depends on."""
        keys = self.fast_keys or tuple(self.params)
        return _hash({k: self.params[k] for k in keys if k in self.params})

    def with_x0(self, x0):
        """Copy with a different initial slow state."""
        clone = ModelSpec(**{f: getattr(self, f) for f in self.__dataclass_fields__})
        clone.x0 = np.asarray(x0, dtype=float)
        return clone


def _hash(obj):
    text = json.dumps(obj, sort_keys=True, default=_jsonable)
    return hashlib.sha1(text.encode()).hexdigest()[:12]


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    return str(v)


# ---------------------------------------------------------------- validators


@dataclass
class ValidationReport:
    """Outcome of the hypothesis checks; ``checks`` maps name to (passed, measured, bound)."""

    checks: dict

    @property
    def passed(self):
        return all(ok for ok, _, _ in self.checks.values())

    def lines(self):
        return [
            f"{'PASS' if ok else 'FAIL'} {name}: measured {meas:.4g} bound {bound:.4g}"
            for name, (ok, meas, bound) in self.checks.items()
        ]


def _sample_states(model, n, rng, scale=1.5):
    x = scale * rng.standard_normal((n, model.n_slow))
    q = scale * rng.standard_normal((n, model.n_fast))
    return x, q


def validate_model(model, n_samples=1000, seed=0, tol=0.05):
    """Check boundedness, Lipschitz and dissipativity hypotheses on samples.

    Lipschitz constants are measured on pairs at distance about 0.05 and on
    independent pairs; dissipativity uses pairs sharing ``x``.
    """
    rng = np.random.default_rng(seed)
    x, q = _sample_states(model, n_samples, rng)
    dx = 0.05 * rng.standard_normal(x.shape)
    dq = 0.05 * rng.standard_normal(q.shape)
    x2, q2 = _sample_states(model, n_samples, rng)
    checks = {}

    b_all, l_all = model.controls(x, q)
    h = model.h(x)
    checks["bound_b"] = _le(np.linalg.norm(b_all, axis=-1).max(), model.M)
    checks["bound_l"] = _le(np.abs(l_all).max(), model.M)
    checks["bound_h"] = _le(np.abs(h).max(), model.M)
    checks["bound_rho"] = _le(np.linalg.norm(model.rho_table, axis=-1).max(), model.M)

    lips = {"b": 0.0, "l": 0.0, "F": 0.0, "h": 0.0, "R": 0.0}
    for xa, qa in ((x + dx, q + dq), (x2, q2)):
        dist = np.sqrt(np.sum((xa - x) ** 2, -1) + np.sum((qa - q) ** 2, -1))
        dist_x = np.linalg.norm(xa - x, axis=-1)
        ba, la = model.controls(xa, qa)
        lips["b"] = max(lips["b"], np.max(np.linalg.norm(ba - b_all, axis=-1) / dist[:, None]))
        lips["l"] = max(lips["l"], np.max(np.abs(la - l_all) / dist[:, None]))
        lips["F"] = max(lips["F"], np.max(np.linalg.norm(model.F(xa, qa) - model.F(x, q), axis=-1) / dist))
        lips["h"] = max(lips["h"], np.max(np.abs(model.h(xa) - h) / dist_x))
        lips["R"] = max(lips["R"], np.max(np.abs(model.R(xa) - model.R(x)).max(-1) / dist_x))
    for name, val in lips.items():
        checks[f"lipschitz_{name}"] = _le(val, model.L * (1 + tol))

    # one-sided Lipschitz of B + F in q at fixed x
    qb = q + dq
    diff = model.B_eigs * (q - qb) + model.F(x, q) - model.F(x, qb)
    ratio = np.sum(diff * (q - qb), -1) / np.sum((q - qb) ** 2, -1)
    checks["dissipativity"] = _le(ratio.max(), -model.mu)
    checks["B_spectrum"] = _le(model.B_eigs.max(), -model.mu)

    # smoothing exponent: the fitted constant must be finite and moderate
    for label, sg in (("A", model.sgA), ("B", model.sgB)):
        c = fit_hs_constant(sg, model.gamma)
        checks[f"hs_decay_{label}"] = _le(c, 10.0 * max(1.0, np.sqrt(sg.dim)))
    if model.gamma >= 0.5:
        checks["gamma_below_half"] = (False, model.gamma, 0.5)

    if model.R_zero:
        checks["R_vanishes"] = _le(np.abs(model.R(x)).max(), 0.0)
    return ValidationReport(checks)


def _le(measured, bound):
    measured = float(measured)
    return (bool(measured <= bound + 1e-12), measured, float(bound))


# ------------------------------------------------------------------- presets


def _bump(x1, target, width=0.5):
    return 1.0 - np.exp(-((x1 - target) ** 2) / width)


def reaction_diffusion(
    n_slow=8,
    n_fast=8,
    n_grid=63,
    nu_slow=0.1,
    nu_fast=0.1,
    m=1.0,
    f_amp=0.4,
    g_amp=0.8,
    rho_amp=0.25,
    sigma0=0.4,
    b_amp=0.6,
    x_target=0.8,
    x0_amp=0.2,
    q0_amp=3.0,
    fast_cost=0.4,
    cost_width=1.5,
    name="reaction_diffusion",
):
    """Two coupled reaction-diffusion equations on [0, 1] with Dirichlet data.

    Slow field: diffusivity ``nu_slow``, controlled drift along the first mode
    whose efficiency depends on the fast field, multiplicative noise
    ``sigma0 |sin x_1| / k`` on mode k.  Fast field: diffusivity ``nu_fast``,
    damping ``m``, reaction ``f_amp sin(Q + x_1 phi_1)``, noise ``g_amp / k``
    on mode k and control forcing ``rho_amp u`` times the constant profile.
    The dissipativity margin reported is ``m - f_amp``.
    """
    if m <= f_amp:
        raise ConfigurationError("need m larger than the reaction Lipschitz constant")
    basis = SineBasis(n_grid, max(n_slow, n_fast))
    phi_f = basis.phi[:n_fast]
    phi1 = basis.phi[0]
    w = basis.weight
    k_fast = np.arange(1, n_fast + 1)
    k_slow = np.arange(1, n_slow + 1)
    # orthonormal coefficients of the constant function 1
    const_profile = np.sqrt(2.0) * (1 - (-1.0) ** k_fast) / (k_fast * np.pi)
    U = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])

    def zeta(q):
        return (np.tanh(q @ phi_f) @ phi1) * w

    def efficiency(z):
        return 0.5 * (1.0 + np.tanh(2.0 * z))

    def slow_cost(x):
        return 0.3 * _bump(x[:, 0], x_target, cost_width)

    def b(x, q, u):
        out = np.zeros((x.shape[0], n_slow))
        out[:, 0] = b_amp * u * efficiency(zeta(q))
        return out

    def l(x, q, u):
        return slow_cost(x) + 0.1 * u**2 + fast_cost * np.tanh(zeta(q)) ** 2

    def control_table(x, q):
        z = zeta(q)
        b_all = np.zeros((x.shape[0], U.size, n_slow))
        b_all[:, :, 0] = b_amp * np.outer(efficiency(z), U)
        l_all = (slow_cost(x) + fast_cost * np.tanh(z) ** 2)[:, None] + 0.1 * U**2
        return b_all, l_all

    def F(x, q):
        field_ = q @ phi_f + x[:, :1] * phi1
        return (f_amp * np.sin(field_)) @ phi_f.T * w

    def R(x):
        return sigma0 * np.abs(np.sin(x[:, :1])) / k_slow

    def h(x):
        return 0.8 * _bump(x[:, 0], x_target, cost_width)

    params = dict(
        n_slow=n_slow, n_fast=n_fast, n_grid=n_grid, nu_slow=nu_slow, nu_fast=nu_fast,
        m=m, f_amp=f_amp, g_amp=g_amp, rho_amp=rho_amp, sigma0=sigma0, b_amp=b_amp,
        x_target=x_target, x0_amp=x0_amp, q0_amp=q0_amp, fast_cost=fast_cost,
        cost_width=cost_width,
    )
    fast_keys = ("n_fast", "n_grid", "nu_fast", "m", "f_amp", "g_amp", "rho_amp",
                 "b_amp", "x_target", "fast_cost", "cost_width", "n_slow")
    x0 = np.zeros(n_slow)
    x0[0] = x0_amp
    q0 = np.zeros(n_fast)
    q0[0] = q0_amp
    return ModelSpec(
        name=name,
        A_eigs=laplacian_eigenvalues(n_slow, nu_slow),
        B_eigs=laplacian_eigenvalues(n_fast, nu_fast, m),
        b=b, F=F, R=R, G=g_amp / k_fast,
        rho=lambda u: rho_amp * np.asarray(u, dtype=float).reshape(()) * const_profile,
        l=l, h=h, U=U, M=1.0, L=2.0, mu=m - f_amp, gamma=0.25,
        x0=x0, q0=q0, params=params, fast_keys=fast_keys,
        control_table=control_table, R_zero=(sigma0 == 0.0),
    )


def degenerate_R0(**overrides):
    """The reaction-diffusion preset with no slow noise."""
    overrides.setdefault("sigma0", 0.0)
    overrides.setdefault("name", "degenerate_R0")
    return reaction_diffusion(**overrides)


def linear_toy(
    a=(-1.0, -2.0),
    bq=(-2.0, -3.0),
    f_lin=0.5,
    f_x=0.3,
    g=(0.6, 0.4),
    r=(0.3, 0.2),
    b_amp=0.5,
    x0=(0.2, 0.0),
    q0=(1.0, 0.0),
    name="linear_toy",
):
    """Two slow and two fast modes with a fast equation that is linear in q.

    The frozen fast process is Gaussian and uncontrolled (``rho = 0``) and the
    running cost separates, so the ergodic value has a quadrature closed form
    (see ``linear_toy_lambda``).
    """
    a = np.asarray(a, dtype=float)
    bq = np.asarray(bq, dtype=float)
    U = np.array([-1.0, 0.0, 1.0])

    def b(x, q, u):
        out = np.zeros_like(x)
        out[:, 0] = b_amp * u
        return out

    def l(x, q, u):
        return 0.3 * np.tanh(x[:, 0] - 0.5) ** 2 + 0.1 * u**2 + 0.2 * np.tanh(q[:, 0]) ** 2

    def F(x, q):
        out = f_lin * q
        out[:, 0] += f_x * np.tanh(x[:, 0])
        return out

    params = dict(a=list(a), bq=list(bq), f_lin=f_lin, f_x=f_x, g=list(g), r=list(r),
                  b_amp=b_amp, x0=list(x0), q0=list(q0))
    return ModelSpec(
        name=name, A_eigs=a, B_eigs=bq, b=b, F=F,
        R=lambda x: np.broadcast_to(np.asarray(r, dtype=float), x.shape).copy(),
        G=np.asarray(g, dtype=float),
        rho=lambda u: np.zeros(len(g)),
        l=l, h=lambda x: 0.5 * np.tanh(x[:, 0] - 0.5) ** 2,
        U=U, M=1.0, L=2.0, mu=-bq.max() - f_lin, gamma=0.25,
        x0=x0, q0=q0, params=params,
        fast_keys=("bq", "f_lin", "f_x", "g", "b_amp"),
    )


def linear_toy_lambda(model, x1, z, n_nodes=40):
    """Closed-form ergodic value of ``linear_toy`` by Gauss-Hermite quadrature.

    The frozen fast mode 1 is an Ornstein-Uhlenbeck process with mean
    ``f_x tanh(x1) / r`` and variance ``g_1^2 / (2 r)``, ``r = -(B_1 + f_lin)``.
    """
    p = model.params
    rate = -(p["bq"][0] + p["f_lin"])
    mean = p["f_x"] * np.tanh(x1) / rate
    sd = p["g"][0] / np.sqrt(2 * rate)
    nodes, weights = np.polynomial.hermite_e.hermegauss(n_nodes)
    fast = 0.2 * np.sum(weights * np.tanh(mean + sd * nodes) ** 2) / np.sqrt(2 * np.pi)
    control = min(p["b_amp"] * z * u + 0.1 * u**2 for u in model.U)
    return 0.3 * np.tanh(x1 - 0.5) ** 2 + fast + control


def one_mode_ergodic(controlled=True, m=1.0, g=3.0, name=None):
    """Single slow and single fast mode, used to test ergodic solvers.

    The fast generator is ``-(pi^2 + m)``.  In the uncontrolled variant
    ``F = 0``, ``rho = 0``, ``b = 0`` and ``l = min(q^2, 1)``, whose ergodic
    value is ``E[min(Q^2, 1)]`` under the stationary Gaussian law.
    """
    B = -(np.pi**2 + m)
    if controlled:
        U = np.array([-1.0, 0.0, 1.0])

        def F(x, q):
            return 0.5 * np.sin(q)

        def b(x, q, u):
            return (0.5 * u)[:, None] * np.ones((x.shape[0], 1))

        def l(x, q, u):
            return 0.9 * np.minimum((q[:, 0] - 0.5) ** 2, 1.0) + 0.1 * u**2

        rho = lambda u: np.array([float(u)])
    else:
        U = np.array([0.0])

        def F(x, q):
            return np.zeros_like(q)

        def b(x, q, u):
            return np.zeros_like(x)

        def l(x, q, u):
            return np.minimum(q[:, 0] ** 2, 1.0)

        rho = lambda u: np.zeros(1)
    params = dict(controlled=controlled, m=m, g=g)
    return ModelSpec(
        name=name or ("one_mode_controlled" if controlled else "one_mode_uncontrolled"),
        A_eigs=[-np.pi**2], B_eigs=[B], b=b, F=F, R=lambda x: np.zeros_like(x),
        G=[g], rho=rho, l=l, h=lambda x: np.zeros(x.shape[0]), U=U,
        M=1.0, L=2.0, mu=-B - (0.5 if controlled else 0.0), gamma=0.25,
        x0=[0.0], q0=[0.0], params=params, R_zero=True,
    )


PRESETS = {
    "reaction_diffusion": reaction_diffusion,
    "linear_toy": linear_toy,
    "degenerate_R0": degenerate_R0,
}


def load_preset(name, **overrides):
    """Build a shipped preset, optionally overriding its parameters.

    Raises
    ------
    ConfigurationError
        For an unknown name; the message lists the available presets.
    """
    if name not in PRESETS:
        raise ConfigurationError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}"
        )
    return PRESETS[name](**overrides)
