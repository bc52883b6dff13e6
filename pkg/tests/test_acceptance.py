"""End-to-end acceptance suite at desk scale.

Each test prints one PASS/FAIL line (collected in the terminal summary) and
then asserts the criterion at its stated tolerance.  The reference tables are
built once per module into a temporary cache.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from twoscale import harness
from twoscale.bsde import solve_full_bsde, value_by_policy
from twoscale.dynamics import TwoScaleParams, replay, simulate_pair
from twoscale.ergodic import (
    ErgodicSettings, build_lambda_table, estimate_lambda, lambda_property_audit,
)
from twoscale.legendre import round_trip_error
from twoscale.model import linear_toy, one_mode_ergodic, reaction_diffusion
from twoscale.spectral import apply_semigroup

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture(scope="module")
def reference(tmp_path_factory):
    out = tmp_path_factory.mktemp("reference")
    cfg = harness.load_config(CONFIGS / "reference.yaml", out=str(out))
    model = cfg.model()
    t = time.perf_counter()
    tables = harness.prepare_tables(model, cfg)
    return cfg, model, tables, time.perf_counter() - t


def _worst(audits, prefix=""):
    bad = [k for k, a in audits.items() if k.startswith(prefix) and not a["passed"]]
    return ", ".join(bad) or "none"


# --------------------------------------------------------------------- tables


def test_c1_lambda_properties(report):
    t = time.perf_counter()
    results = {}
    for model in (reaction_diffusion(), linear_toy()):
        tab = build_lambda_table(model, np.linspace(-1.5, 2.0, 9), np.linspace(-2, 2, 9),
                                 ErgodicSettings(n_paths=128, seed=1))
        results[model.name] = lambda_property_audit(tab, model.M, model.L, slack=3.0)
    runtime = time.perf_counter() - t
    ok = all(r.passed for r in results.values()) and runtime <= 300
    failed = [f"{n}:{k}" for n, r in results.items() for k, c in r.checks.items() if not c.passed]
    report(1, ok, f"9x9 tables, failed checks: {failed or 'none'}, runtime {runtime:.0f}s (limit 300s)")
    assert ok


def test_c2_lambda_oracles(report):
    model = one_mode_ergodic(controlled=True)
    s = ErgodicSettings(n_paths=128, seed=2)
    gaps = []
    for z in (-1.0, 0.0, 1.0):
        mc = estimate_lambda(model, 0.0, z, settings=s)
        vi = estimate_lambda(model, 0.0, z, solver="grid_vi")
        gaps.append(abs(mc.mean - vi.mean) - (3 * mc.stderr + 0.02))
    free = one_mode_ergodic(controlled=False)
    mc = estimate_lambda(free, 0.0, 0.0, settings=ErgodicSettings(n_paths=128, seed=3))
    from scipy import integrate, stats
    sd = 3.0 / np.sqrt(2 * (np.pi**2 + 1.0))
    inner, _ = integrate.quad(lambda q: q * q * stats.norm.pdf(q, scale=sd), -1, 1)
    quad = inner + 2 * stats.norm.sf(1, scale=sd)
    quad_gap = abs(mc.mean - quad) - 3 * mc.stderr
    ok = max(gaps) <= 0 and quad_gap <= 0
    report(2, ok, f"worst excess over tolerance: value iteration {max(gaps):.4f}, quadrature {quad_gap:.4f}")
    assert ok


def test_c3_fenchel_round_trip(reference, report):
    _, _, tables, build = reference
    err, excess, _ = round_trip_error(tables.leg, tables.lam, tables.trunc, n_z=201)
    ok = excess <= 0.02
    report(3, ok, f"max |error| {err:.4f}, worst excess over 3 stderr {excess:.4f} (limit 0.02); "
                  f"tables built in {build:.0f}s")
    assert ok


# --------------------------------------------------------------------- limits


def test_c4_vanishing_noise_rate(reference, report):
    cfg, model, _, _ = reference
    t = time.perf_counter()
    res = harness.run_eta_sweep(cfg, model)
    runtime = time.perf_counter() - t
    slopes = {k: round(v["slope"], 3) for k, v in res.slopes.items()}
    ok = res.passed and runtime <= 900
    report(4, ok, f"slopes {slopes}, failed audits: {_worst(res.audits)}, runtime {runtime:.0f}s (limit 900s)")
    assert ok


def test_c5_epsilon_convergence(reference, report):
    cfg, model, tables, _ = reference
    res = harness.run_epsilon_sweep(cfg, model, tables)
    a = res.audits
    ok = res.passed
    report(5, ok, f"deviation at eps_min {a['deviation_at_eps_min']['measured']:.4f} "
                  f"(tolerance {a['deviation_at_eps_min']['tolerance']:.4f}), "
                  f"failed audits: {_worst(a)}")
    assert ok


def test_c6_interchange(reference, report):
    cfg, model, tables, _ = reference
    t = time.perf_counter()
    res = harness.run_interchange(cfg, model, tables)
    runtime = time.perf_counter() - t
    agree = {k: (round(a["measured"], 4), round(a["tolerance"], 4))
             for k, a in res.audits.items() if k.startswith("agree_")}
    ok = all(a["passed"] for k, a in res.audits.items() if k.startswith("agree_")) and runtime <= 1200
    report(6, ok, f"pairwise (gap, tolerance) {agree}, runtime {runtime:.0f}s (limit 1200s)")
    assert ok


def test_c7_deterministic_reduction(tmp_path, report):
    cfg = harness.load_config(CONFIGS / "degenerate.yaml", out=str(tmp_path))
    res = harness.run_reduced(cfg)
    a = res.audits
    keys = ("stochastic_vs_deterministic", "stochastic_vs_dp", "deterministic_vs_dp")
    ok = all(a[k]["passed"] for k in keys)
    report(7, ok, ", ".join(f"{k} {a[k]['measured']:.4f} (tolerance {a[k]['tolerance']:.4f})" for k in keys))
    assert ok


# ------------------------------------------------------------------ invariants


def _random_policy(rng, n_controls, n_blocks=10):
    table = rng.integers(0, n_controls, size=(n_blocks, 2))
    cut = rng.uniform(-0.5, 0.5)

    def policy(t, x, q):
        j = min(int(t * n_blocks), n_blocks - 1)
        return table[j, (x[:, 0] > cut).astype(int)]

    return policy


def test_c8_dynamics_invariants(report):
    checks = {}
    toy = linear_toy()
    slopes = []
    for eps in (0.05, 0.2):
        a = simulate_pair(toy, TwoScaleParams(eps, 0.0), None, 1, seed=2)
        b = simulate_pair(toy, TwoScaleParams(eps, 0.0, q0=[1.5, 0.0]), None, noise=(a.dW1, a.dW2, a.dB))
        keep = a.times <= 5 * eps
        d = np.linalg.norm(a.Q[0] - b.Q[0], axis=-1)[keep]
        slope = np.polyfit(a.times[keep], np.log(d), 1)[0]
        slopes.append(abs(slope / (-toy.mu / eps) - 1))
    checks["contraction"] = max(slopes) <= 0.1

    model = reaction_diffusion()
    semi = 0.0
    for sg in (model.sgA, model.sgB):
        w = np.random.default_rng(1).normal(size=(4, sg.dim))
        semi = max(semi, np.max(np.abs(apply_semigroup(sg, 0.3, apply_semigroup(sg, 0.2, w))
                                       - apply_semigroup(sg, 0.5, w))))
    checks["semigroup"] = semi <= 1e-12

    params = TwoScaleParams(0.05, 0.2)
    pol = lambda t, x, q: (x[:, 0] > 0.3).astype(int) + 2 * (q[:, 0] > 0)
    a = simulate_pair(model, params, pol, 16, seed=9)
    b = replay(model, params, pol, a)
    checks["replay"] = bool(np.array_equal(a.X, b.X) and np.array_equal(a.Q, b.Q))

    eps, eta = 0.2, 0.2
    sol = solve_full_bsde(model, eps, eta, n_paths=2000, seed=4)
    checks["terminal"] = bool(np.array_equal(sol.Y[:, -1], model.h(sol.X[:, -1])))

    rng = np.random.default_rng(8)
    margins = []
    for _ in range(50):
        val = value_by_policy(model, eps, eta, _random_policy(rng, model.U.size), 2000, seed=5)
        margins.append(val.mean - (sol.Y0.mean - 3 * val.combined_stderr(sol.Y0)))
    checks["sandwich"] = min(margins) >= 0
    ok = all(checks.values())
    report(8, ok, f"contraction rel err {max(slopes):.3f}, semigroup {semi:.1e}, "
                  f"sandwich min margin {min(margins):.4f}, failed: {[k for k, c in checks.items() if not c] or 'none'}")
    assert ok


def test_c9_lipschitz_uniformity(reference, report):
    cfg, model, _, _ = reference
    t = time.perf_counter()
    res = harness.run_lipschitz_audit(cfg, model)
    a = res.audits["lipschitz_uniform_over_grid"]
    report(9, a["passed"], f"max/min - 1 = {a['measured']:.3f} (limit 0.3) {a['detail']}, "
                           f"{len(res.rows)} cells in {time.perf_counter() - t:.0f}s")
    assert a["passed"]
