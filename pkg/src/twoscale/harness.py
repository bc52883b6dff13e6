"""Experiment configuration, sweeps, audits and CSV output.

Every sweep returns a ``SweepResult`` whose ``audits`` record each check as
``passed``, ``measured`` and ``tolerance``; a run passes when all audits do.
Result CSVs contain only deterministic columns so that the same config and
seed give byte-identical files; wall-clock times go to a ``*_timing.csv``
sidecar.
"""

from dataclasses import dataclass, field, fields, asdict, is_dataclass
import csv
import hashlib
import json
import multiprocessing
import os
from pathlib import Path
import time

import numpy as np
from scipy import stats
import yaml

from twoscale.bsde import (
    RegressionBasis, improve_policies, myopic_policy, solve_limit_bsde, value_by_policy,
)
from twoscale.ergodic import ErgodicSettings, LambdaTable, build_lambda_table, lambda_property_audit
from twoscale.errors import ConfigurationError
from twoscale.estimates import ValueEstimate
from twoscale.legendre import (
    LegendreTable, build_legendre_table, choose_kappa, containment_fraction,
    legendre_property_audit, round_trip_error,
)
from twoscale.model import load_preset
from twoscale.reduced import dp_oracle, solve_reduced, solve_reduced_deterministic

WORKERS_ENV = "TWOSCALE_WORKERS"


# ---------------------------------------------------------------------- config


@dataclass
class PolicyConfig:
    n_paths: int = 2000
    n_train: int = 1000
    n_rounds: int = 3
    antithetic: bool = True


@dataclass
class LambdaGridConfig:
    """Grid of the ergodic table: uniform in ``x``; in ``z`` dense on
    ``[-z_inner, z_inner]`` and sparse out to the cap radius."""

    x_min: float = -1.5
    x_max: float = 2.0
    n_x: int = 15
    z_inner: float = 2.0
    n_z_inner: int = 33
    n_z_outer: int = 5
    n_paths: int = 128
    dt: float = 0.05
    n_rounds: int = 2
    T_min: float = 10.0


@dataclass
class LegendreConfig:
    n_alpha: int = 4001
    n_z: int = 201


@dataclass
class BsdeConfig:
    n_paths: int = 2000
    dt: float = 0.02


@dataclass
class ReducedConfig:
    n_paths: int = 2000
    n_rounds: int = 6
    dt: float = 0.01
    n_blocks: int = 10


@dataclass
class SimulateConfig:
    epsilon: float = 0.05
    eta: float = 0.1
    n_paths: int = 200


@dataclass
class ExperimentConfig:
    """Everything a CLI run or sweep needs.

    ``eta_sweep_eps`` lists the ``eps`` values of the vanishing-noise sweep
    and ``eps_sweep_eta`` the fixed ``eta`` of the ``eps`` sweep.
    ``lipschitz_cell`` is the ``(eps, eta)`` cell whose finite-difference
    Lipschitz estimate sets the truncation constants.
    """

    preset: str = "reaction_diffusion"
    overrides: dict = field(default_factory=dict)
    eps_grid: list = field(default_factory=lambda: [0.5, 0.2, 0.1, 0.05, 0.02])
    eta_grid: list = field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05, 0.0])
    eta_sweep_eps: list = field(default_factory=lambda: [0.2, 0.05])
    eps_sweep_eta: float = 0.1
    lipschitz_delta: float = 0.1
    lipschitz_cell: list = field(default_factory=lambda: [0.05, 0.1])
    seed: int = 0
    out: str = "out"
    cache_dir: str = None
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    lambda_grid: LambdaGridConfig = field(default_factory=LambdaGridConfig)
    legendre: LegendreConfig = field(default_factory=LegendreConfig)
    bsde: BsdeConfig = field(default_factory=BsdeConfig)
    reduced: ReducedConfig = field(default_factory=ReducedConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)

    def __post_init__(self):
        validate_grids(self.eps_grid, self.eta_grid)

    def model(self):
        return load_preset(self.preset, **self.overrides)

    def cache_path(self):
        return Path(self.cache_dir) if self.cache_dir else Path(self.out) / "cache"

    def fingerprint(self):
        text = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha1(text.encode()).hexdigest()[:12]


def validate_grids(eps_grid, eta_grid):
    """Grids must be strictly descending and positive, except a trailing zero ``eta``."""
    for name, g, zero_ok in (("eps_grid", eps_grid, False), ("eta_grid", eta_grid, True)):
        g = list(g)
        if not g:
            raise ConfigurationError(f"{name} is empty")
        if any(b >= a for a, b in zip(g, g[1:])):
            raise ConfigurationError(f"{name} must be sorted in descending order")
        positive = g[:-1] if zero_ok else g
        if any(v <= 0 for v in positive) or g[-1] < 0:
            raise ConfigurationError(f"{name} entries must be positive" +
                                     (" (a trailing 0 is allowed)" if zero_ok else ""))


_SECTIONS = {"policy": PolicyConfig, "lambda": LambdaGridConfig, "lambda_grid": LambdaGridConfig,
             "legendre": LegendreConfig, "bsde": BsdeConfig, "reduced": ReducedConfig,
             "simulate": SimulateConfig}


def config_from_dict(data):
    """Build an ``ExperimentConfig`` from a nested mapping; unknown keys are errors."""
    data = dict(data or {})
    kwargs = {}
    top = {f.name for f in fields(ExperimentConfig)}
    for key, val in data.items():
        if key in _SECTIONS:
            cls = _SECTIONS[key]
            allowed = {f.name for f in fields(cls)}
            bad = set(val or {}) - allowed
            if bad:
                raise ConfigurationError(f"unknown keys in section {key!r}: {sorted(bad)}")
            kwargs["lambda_grid" if key == "lambda" else key] = cls(**(val or {}))
        elif key in top:
            kwargs[key] = val
        else:
            raise ConfigurationError(f"unknown config key {key!r}")
    return ExperimentConfig(**kwargs)


def load_config(path=None, **updates):
    """Read a YAML config (or defaults) and apply top-level updates such as ``seed``."""
    data = {}
    if path is not None:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    data.update({k: v for k, v in updates.items() if v is not None})
    return config_from_dict(data)


def config_to_dict(cfg):
    out = asdict(cfg)
    out["lambda"] = out.pop("lambda_grid")
    return out


# ---------------------------------------------------------------------- results


@dataclass
class SweepResult:
    """Rows of estimates plus fitted slopes and audits."""

    name: str
    rows: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)
    audits: dict = field(default_factory=dict)
    plots: dict = field(default_factory=dict)

    def add(self, epsilon, eta, estimator, est, runtime, budget=None):
        self.rows.append(dict(epsilon=epsilon, eta=eta, estimator=estimator, value=est.mean,
                              stderr=est.stderr, budget=budget if budget is not None else "",
                              fingerprint=est.fingerprint))
        self.timings.append(dict(epsilon=epsilon, eta=eta, estimator=estimator,
                                 runtime_s=round(runtime, 3)))

    def audit(self, name, passed, measured, tolerance, detail=""):
        self.audits[name] = dict(passed=bool(passed), measured=float(measured),
                                 tolerance=float(tolerance), detail=detail)

    @property
    def passed(self):
        return all(a["passed"] for a in self.audits.values())

    def audit_lines(self):
        return [f"{'PASS' if a['passed'] else 'FAIL'} {k}: measured {a['measured']:.4g} "
                f"tolerance {a['tolerance']:.4g} {a['detail']}".rstrip()
                for k, a in self.audits.items()]

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cols = ["epsilon", "eta", "estimator", "value", "stderr", "budget", "fingerprint"]
        _write_csv(out / f"{self.name}.csv", cols, self.rows)
        _write_csv(out / f"{self.name}_timing.csv", ["epsilon", "eta", "estimator", "runtime_s"],
                   self.timings)
        _write_csv(out / f"{self.name}_audits.csv", ["audit", "passed", "measured", "tolerance", "detail"],
                   [dict(audit=k, **v) for k, v in self.audits.items()])
        if self.slopes:
            _write_csv(out / f"{self.name}_slopes.csv", ["key", "slope", "ci_low", "ci_high"],
                       [dict(key=k, **v) for k, v in self.slopes.items()])
        for fname, pts in self.plots.items():
            with open(out / f"{fname}.dat", "w") as fh:
                fh.write("# x y y_err\n")
                for x, y, e in pts:
                    fh.write(f"{_fmt(x)} {_fmt(y)} {_fmt(e)}\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, cols, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in cols])


# ---------------------------------------------------------------------- workers


_JOB = None


def _run_job(i):
    fn, items = _JOB
    return fn(items[i])


def map_cells(fn, items):
    """Apply ``fn`` to ``items`` in order, over a fork pool when the worker env var asks for it."""
    global _JOB
    workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    items = list(items)
    if workers <= 1 or len(items) <= 1 or "fork" not in multiprocessing.get_all_start_methods():
        return [fn(it) for it in items]
    _JOB = (fn, items)
    try:
        with multiprocessing.get_context("fork").Pool(min(workers, len(items))) as pool:
            return pool.map(_run_job, range(len(items)))
    finally:
        _JOB = None


# --------------------------------------------------------------------- building


def _hash(obj):
    return hashlib.sha1(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:12]


def policy_pool(model, cfg, eps_values, eta_values, seed_offset=0):
    """Myopic policy plus one improvement sequence per ``(eps, eta)`` pair."""
    pool = [myopic_policy(model)]
    for i, eps in enumerate(eps_values):
        for j, eta in enumerate(eta_values):
            seed = cfg.seed + 100 + 10 * i + j + seed_offset
            pool += improve_policies(model, eps, eta, cfg.policy.n_rounds, cfg.policy.n_train,
                                     seed)[1:]
    return pool


@dataclass
class CellValue:
    """Least policy value at one cell with the pair-averaged costs of every candidate."""

    estimate: ValueEstimate
    best: int
    costs: np.ndarray


def evaluate_pool(model, cfg, eps, eta, pool, x0=None):
    """Evaluate all candidates on common random numbers; keep per-path costs."""
    ests = [value_by_policy(model, eps, eta, p, cfg.policy.n_paths, cfg.seed,
                            antithetic=cfg.policy.antithetic, x0=x0) for p in pool]
    best = int(np.argmin([e.mean for e in ests]))
    costs = np.array([e.details["path_costs"] for e in ests])
    fp = _hash([model.fingerprint(), "pool", eps, eta, cfg.policy.n_paths, cfg.seed, len(pool)])
    e = ests[best]
    return CellValue(ValueEstimate(e.mean, e.stderr, e.n, fp), best, costs)


def paired_difference(a, b):
    """``a - b`` with the standard error of the paired per-path differences."""
    d = a.costs[a.best] - b.costs[b.best]
    return ValueEstimate.from_samples(d)


def lipschitz_estimate(model, cfg, eps, eta, policy):
    """Central finite difference of a policy value in the active ``x0`` coordinate."""
    delta = cfg.lipschitz_delta
    e = np.zeros(model.n_slow)
    e[model.active_mode] = delta
    plus = value_by_policy(model, eps, eta, policy, cfg.policy.n_paths, cfg.seed,
                           antithetic=cfg.policy.antithetic, x0=model.x0 + e)
    minus = value_by_policy(model, eps, eta, policy, cfg.policy.n_paths, cfg.seed,
                            antithetic=cfg.policy.antithetic, x0=model.x0 - e)
    d = (plus.details["path_costs"] - minus.details["path_costs"]) / (2 * delta)
    est = ValueEstimate.from_samples(d)
    return ValueEstimate(abs(est.mean), est.stderr, est.n, est.fingerprint)


def z_grid_for(cfg, cap_radius):
    g = cfg.lambda_grid
    inner = np.linspace(-g.z_inner, g.z_inner, g.n_z_inner)
    outer_edge = max(cap_radius, g.z_inner) * 1.0 + 1e-9
    if outer_edge <= g.z_inner + 1e-6:
        return inner
    step = (outer_edge - g.z_inner) / g.n_z_outer
    outer = g.z_inner + step * np.arange(1, g.n_z_outer + 1)
    return np.concatenate([-outer[::-1], inner, outer])


@dataclass
class Tables:
    lipschitz: ValueEstimate
    trunc: object
    lam: LambdaTable
    leg: LegendreTable


def prepare_tables(model, cfg, log=print):
    """Lipschitz estimate, truncation constants, ergodic table and conjugate table.

    Tables are cached as CSV under the cache directory, keyed by the fast
    model fingerprint and the grid settings.
    """
    eps, eta = cfg.lipschitz_cell
    pool = policy_pool(model, cfg, [eps], [eta], seed_offset=5)
    cell = evaluate_pool(model, cfg, eps, eta, pool)
    lip = lipschitz_estimate(model, cfg, eps, eta, pool[cell.best])
    trunc = choose_kappa(model, cfg.eta_grid, lip)
    z_grid = z_grid_for(cfg, trunc.cap_radius)
    g = cfg.lambda_grid
    x_grid = np.linspace(g.x_min, g.x_max, g.n_x)
    settings = ErgodicSettings(n_paths=g.n_paths, dt=g.dt, n_rounds=g.n_rounds, T_min=g.T_min,
                               seed=cfg.seed)
    key = _hash([model.fast_fingerprint(), x_grid, z_grid, asdict(settings)])
    cache = cfg.cache_path()
    cache.mkdir(parents=True, exist_ok=True)
    path = cache / f"lambda-{key}.csv"
    if path.exists():
        lam = LambdaTable.from_csv(path)
    else:
        log(f"building ergodic table {x_grid.size}x{z_grid.size} -> {path}")
        lam = build_lambda_table(model, x_grid, z_grid, settings)
        lam.to_csv(path)
    leg = build_legendre_table(lam, trunc, cfg.legendre.n_alpha, cfg.legendre.n_z)
    return Tables(lip, trunc, lam, leg)


# ----------------------------------------------------------------------- sweeps


def fit_slope(x, y):
    """Log-log least-squares slope with a 95% confidence interval."""
    res = stats.linregress(np.log(x), np.log(y))
    half = stats.t.ppf(0.975, len(x) - 2) * res.stderr if len(x) > 2 else np.inf
    return dict(slope=float(res.slope), ci_low=float(res.slope - half), ci_high=float(res.slope + half))


def run_eta_sweep(cfg, model=None, min_slope=0.8, max_spread=0.3):
    """Deviation of the regularized value from the unregularized one along ``eta``."""
    model = model or cfg.model()
    if cfg.eta_grid[-1] != 0:
        raise ConfigurationError("the eta sweep needs a trailing 0 in eta_grid")
    res = SweepResult("eta_sweep")
    etas = list(cfg.eta_grid)
    positive = [e for e in etas if e > 0]
    train_etas = [0.0, positive[len(positive) // 2]] if positive else [0.0]
    devs = {}
    for eps in cfg.eta_sweep_eps:
        t0 = time.perf_counter()
        pool = policy_pool(model, cfg, [eps], train_etas)
        cells = {}
        for eta in etas:
            t = time.perf_counter()
            cells[eta] = evaluate_pool(model, cfg, eps, eta, pool)
            res.add(eps, eta, "policy", cells[eta].estimate, time.perf_counter() - t + (t - t0) * (eta == etas[0]))
        pts = []
        for eta in positive:
            d = paired_difference(cells[eta], cells[0.0])
            devs[(eps, eta)] = d
            d.fingerprint = cells[eta].estimate.fingerprint
            res.add(eps, eta, "deviation_from_eta0", d, 0.0)
            pts.append((eta, abs(d.mean), d.stderr))
        res.plots[f"eta_sweep_eps{eps}"] = pts
        fit = fit_slope([p[0] for p in pts], [p[1] for p in pts])
        res.slopes[f"eps={eps}"] = fit
        res.audit(f"slope_eps={eps}", fit["slope"] >= min_slope, fit["slope"], min_slope,
                  f"95% CI [{fit['ci_low']:.3f}, {fit['ci_high']:.3f}]")
    slopes = [v["slope"] for v in res.slopes.values()]
    res.audit("slope_spread_across_eps", max(slopes) - min(slopes) < max_spread,
              max(slopes) - min(slopes), max_spread)
    res.plots["sup_eps_deviation"] = [
        (eta, max(abs(devs[(eps, eta)].mean) for eps in cfg.eta_sweep_eps), 0.0) for eta in positive]
    return res


def run_epsilon_sweep(cfg, model=None, tables=None, budget=0.05, log=print):
    """Policy values along ``eps`` at fixed ``eta`` against the limit BSDE value."""
    model = model or cfg.model()
    eta = cfg.eps_sweep_eta
    if eta <= 0:
        raise ConfigurationError("the eps sweep needs a positive eta")
    tables = tables or prepare_tables(model, cfg, log)
    res = SweepResult("eps_sweep")
    t = time.perf_counter()
    limit = solve_limit_bsde(model, eta, tables.lam, cfg.bsde.n_paths, seed=cfg.seed, dt=cfg.bsde.dt)
    res.add(0.0, eta, "limit_bsde", limit.Y0, time.perf_counter() - t)
    t = time.perf_counter()
    pool = policy_pool(model, cfg, cfg.eps_grid, [eta])
    train_time = time.perf_counter() - t
    vals, devs = [], []
    for eps in cfg.eps_grid:
        t = time.perf_counter()
        cell = evaluate_pool(model, cfg, eps, eta, pool)
        vals.append(cell.estimate)
        dev = abs(cell.estimate.mean - limit.Y0.mean)
        se = cell.estimate.combined_stderr(limit.Y0)
        devs.append((dev, se))
        res.add(eps, eta, "policy", cell.estimate, time.perf_counter() - t + train_time * (eps == cfg.eps_grid[0]))
        res.add(eps, eta, "deviation_from_limit", ValueEstimate(dev, se, cell.estimate.n,
                                                               cell.estimate.fingerprint), 0.0,
                budget=f"3se+{budget}")
    res.plots["eps_sweep"] = [(eps, d, s) for eps, (d, s) in zip(cfg.eps_grid, devs)]
    last, first = devs[-1], devs[0]
    res.audit("deviation_at_eps_min", last[0] <= 3 * last[1] + budget, last[0], 3 * last[1] + budget,
              f"eps={cfg.eps_grid[-1]}")
    res.audit("deviation_not_above_eps_max", last[0] <= first[0], last[0], first[0],
              f"eps={cfg.eps_grid[-1]} vs eps={cfg.eps_grid[0]}")
    diffs = np.abs(np.diff([v.mean for v in vals]))
    res.audit("successive_differences_decrease", bool(np.all(np.diff(diffs) < 0)),
              float(np.max(np.diff(diffs))) if diffs.size > 1 else 0.0, 0.0,
              "diffs=" + ";".join(f"{d:.5f}" for d in diffs))
    return res


def run_interchange(cfg, model=None, tables=None, budget=0.1, log=print):
    """Three estimates of the limit value and their pairwise agreement."""
    model = model or cfg.model()
    tables = tables or prepare_tables(model, cfg, log)
    res = SweepResult("interchange")
    eps_min = cfg.eps_grid[-1]
    eta_min = min(e for e in cfg.eta_grid if e > 0)

    t = time.perf_counter()
    pool = policy_pool(model, cfg, cfg.eps_grid, [0.0])
    cell = evaluate_pool(model, cfg, eps_min, 0.0, pool)
    v_policy = cell.estimate
    res.add(eps_min, 0.0, "policy", v_policy, time.perf_counter() - t)

    t = time.perf_counter()
    limit = solve_limit_bsde(model, eta_min, tables.lam, cfg.bsde.n_paths, seed=cfg.seed, dt=cfg.bsde.dt)
    res.add(0.0, eta_min, "limit_bsde", limit.Y0, time.perf_counter() - t)
    frac = containment_fraction(limit.Z2[:, :, model.active_mode] / eta_min, tables.trunc)
    res.audit("containment", frac >= 0.99, frac, 0.99, f"kappa={tables.trunc.kappa:.4g}")

    t = time.perf_counter()
    red = solve_reduced(model, tables.leg, 0.0, cfg.reduced.n_paths, cfg.reduced.n_rounds, cfg.seed,
                        cfg.reduced.dt, cfg.reduced.n_blocks)
    res.add(0.0, 0.0, "reduced", red.value, time.perf_counter() - t)

    ests = {"policy": v_policy, "limit_bsde": limit.Y0, "reduced": red.value}
    names = list(ests)
    pts = []
    for i, a in enumerate(names):
        pts.append((i, ests[a].mean, ests[a].stderr))
        for b in names[i + 1:]:
            dev = abs(ests[a].mean - ests[b].mean)
            tol = 3 * ests[a].combined_stderr(ests[b]) + budget
            res.audit(f"agree_{a}_{b}", dev <= tol, dev, tol)
    res.plots["interchange"] = pts

    return res


def run_lipschitz_audit(cfg, model=None, max_spread=0.3, cells=None):
    """Finite-difference Lipschitz constants of the value in ``x0`` over the grid.

    Each cell uses its own improvement sequence; the constant is measured
    along the best candidate (the derivative of a minimum follows its
    minimizer).
    """
    model = model or cfg.model()
    res = SweepResult("lipschitz")
    cells = cells or [(eps, eta) for eps in cfg.eps_grid for eta in cfg.eta_grid]

    def one(cell_):
        eps, eta = cell_
        t = time.perf_counter()
        pool = policy_pool(model, cfg, [eps], [eta])
        best = evaluate_pool(model, cfg, eps, eta, pool)
        lip = lipschitz_estimate(model, cfg, eps, eta, pool[best.best])
        return lip.mean, lip.stderr, lip.n, time.perf_counter() - t

    out = map_cells(one, cells)
    vals = []
    for (eps, eta), (m, se, n, rt) in zip(cells, out):
        est = ValueEstimate(m, se, n, _hash([model.fingerprint(), "lip", eps, eta, cfg.seed]))
        res.add(eps, eta, "lipschitz_x0", est, rt)
        vals.append(m)
    spread = max(vals) / min(vals) - 1
    res.audit("lipschitz_uniform_over_grid", spread < max_spread, spread, max_spread,
              f"min={min(vals):.4f} max={max(vals):.4f}")
    res.plots["lipschitz"] = [(i, v, 0.0) for i, v in enumerate(vals)]
    return res


def table_audits(model, tables, res, n_z=201):
    """Ergodic-table and conjugate-table audits appended to ``res``."""
    rep = lambda_property_audit(tables.lam, model.M, model.L)
    for k, c in rep.checks.items():
        res.audit(f"lambda_{k}", c.passed, c.worst, 0.0, f"{len(c.violations)} violations")
    err, excess, _ = round_trip_error(tables.leg, tables.lam, tables.trunc, n_z)
    res.audit("fenchel_round_trip", excess <= 0.02, excess, 0.02, f"max_abs_error={err:.4g}")
    for k, (ok, meas, bound) in legendre_property_audit(tables.lam, tables.leg, tables.trunc,
                                                         model.L).items():
        res.audit(f"legendre_{k}", ok, meas, bound)
    return res


def run_reduced(cfg, model=None, tables=None, log=print):
    """Reduced problem at ``eta = 0``; with ``R = 0`` also the deterministic and DP solvers."""
    model = model or cfg.model()
    tables = tables or prepare_tables(model, cfg, log)
    res = SweepResult("reduce")
    t = time.perf_counter()
    red = solve_reduced(model, tables.leg, 0.0, cfg.reduced.n_paths, cfg.reduced.n_rounds, cfg.seed,
                        cfg.reduced.dt, cfg.reduced.n_blocks)
    res.add(0.0, 0.0, "reduced", red.value, time.perf_counter() - t)
    res.audit("monotone_improvement", bool(np.all(np.diff(red.history) <= 0)),
              float(np.max(np.diff(red.history))) if len(red.history) > 1 else 0.0, 0.0)
    if model.R_zero:
        t = time.perf_counter()
        det = solve_reduced_deterministic(model, tables.leg, n_steps=int(round(1 / cfg.reduced.dt)),
                                          seed=cfg.seed)
        res.add(0.0, 0.0, "reduced_deterministic", ValueEstimate(det.value, det.table_stderr, 1), time.perf_counter() - t)
        t = time.perf_counter()
        lam = tables.lam
        xg = np.linspace(lam.x_grid[0], lam.x_grid[-1], 141)
        ag = np.linspace(-tables.trunc.alpha_radius, tables.trunc.alpha_radius, 81)
        dp = dp_oracle(model, tables.leg, xg, ag, n_steps=int(round(1 / cfg.reduced.dt)))
        res.add(0.0, 0.0, "dp_oracle", ValueEstimate(dp, 0.0, 0), time.perf_counter() - t)
        tol = 3 * red.value.stderr
        gap = abs(red.value.mean - det.value)
        res.audit("stochastic_vs_deterministic", gap <= tol, gap, tol)
        for name, v in (("stochastic", red.value.mean), ("deterministic", det.value)):
            res.audit(f"{name}_vs_dp", abs(v - dp) <= 0.05, abs(v - dp), 0.05)
    return res
