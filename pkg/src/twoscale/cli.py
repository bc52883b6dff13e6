"""Command-line entry point ``twoscale``.

Every subcommand takes ``--config``, ``--seed`` and ``--out``, writes CSV
results under ``--out`` and exits with status 0 exactly when all of its
audits pass.
"""

import argparse
import sys
from pathlib import Path

import numpy as np
import yaml

from twoscale import harness
from twoscale.bsde import solve_limit_bsde
from twoscale.dynamics import TwoScaleParams, simulate_pair
from twoscale.errors import ConfigurationError
from twoscale.model import validate_model


def _validate(cfg, model, out):
    rep = validate_model(model)
    res = harness.SweepResult("validate")
    for name, (ok, measured, bound) in rep.checks.items():
        res.audit(name, ok, measured, bound)
    return res


def _simulate(cfg, model, out):
    s = cfg.simulate
    params = TwoScaleParams(s.epsilon, s.eta)
    bundle = simulate_pair(model, params, None, s.n_paths, cfg.seed)
    bundle.to_csv(Path(out) / "paths.csv")
    res = harness.SweepResult("simulate")
    finite = bool(np.all(np.isfinite(bundle.X)) and np.all(np.isfinite(bundle.Q)))
    res.audit("finite_paths", finite, float(np.abs(bundle.X).max()), np.inf)
    return res


def _lambda(cfg, model, out):
    tables = harness.prepare_tables(model, cfg)
    tables.lam.to_csv(Path(out) / "lambda_table.csv")
    res = harness.SweepResult("lambda")
    rep = harness.lambda_property_audit(tables.lam, model.M, model.L)
    for k, c in rep.checks.items():
        res.audit(f"lambda_{k}", c.passed, c.worst, 0.0, f"{len(c.violations)} violations")
    return res


def _legendre(cfg, model, out):
    tables = harness.prepare_tables(model, cfg)
    tables.leg.to_csv(Path(out) / "legendre_table.csv")
    res = harness.SweepResult("legendre")
    return harness.table_audits(model, tables, res, cfg.legendre.n_z)


def _bsde(cfg, model, out):
    tables = harness.prepare_tables(model, cfg)
    eta = cfg.eps_sweep_eta
    sol = solve_limit_bsde(model, eta, tables.lam, cfg.bsde.n_paths, seed=cfg.seed, dt=cfg.bsde.dt)
    res = harness.SweepResult("bsde")
    res.add(0.0, eta, "limit_bsde", sol.Y0, 0.0)
    frac = harness.containment_fraction(sol.Z2[:, :, model.active_mode] / eta, tables.trunc)
    res.audit("containment", frac >= 0.99, frac, 0.99)
    return res


def _reduce(cfg, model, out):
    return harness.run_reduced(cfg, model)


def _sweep_eta(cfg, model, out):
    return harness.run_eta_sweep(cfg, model)


def _sweep_eps(cfg, model, out):
    return harness.run_epsilon_sweep(cfg, model)


def _interchange(cfg, model, out):
    return harness.run_interchange(cfg, model)


def _lipschitz(cfg, model, out):
    return harness.run_lipschitz_audit(cfg, model)


COMMANDS = {
    "validate": (_validate, "check the structural assumptions of the model"),
    "simulate": (_simulate, "simulate uncontrolled slow/fast paths"),
    "lambda": (_lambda, "build and audit the ergodic value table"),
    "legendre": (_legendre, "build and audit the truncated conjugate table"),
    "bsde": (_bsde, "solve the limit BSDE at the eps-sweep eta"),
    "reduce": (_reduce, "solve the reduced control problem"),
    "sweep-eta": (_sweep_eta, "vanishing-noise sweep with log-log slopes"),
    "sweep-eps": (_sweep_eps, "time-scale sweep against the limit BSDE"),
    "interchange": (_interchange, "compare the three limit estimates"),
    "lipschitz": (_lipschitz, "Lipschitz constants in x0 over the parameter grid"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="twoscale", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", default=None, help="YAML experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = harness.load_config(args.config, seed=args.seed, out=args.out)
        model = cfg.model()
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config_used.yaml", "w") as fh:
        yaml.safe_dump(harness.config_to_dict(cfg), fh, sort_keys=True)
    fn, _ = COMMANDS[args.command]
    res = fn(cfg, model, out)
    res.write(out)
    for line in res.audit_lines():
        print(line)
    return 0 if res.passed else 1


if __name__ == "__main__":
    sys.exit(main())
