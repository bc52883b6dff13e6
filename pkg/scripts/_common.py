"""Shared argument handling for the experiment scripts."""

import argparse
from pathlib import Path

from twoscale import harness

DEFAULT_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "reference.yaml"


def parse(description):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", default=str(DEFAULT_CONFIG))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    args = p.parse_args()
    cfg = harness.load_config(args.config, seed=args.seed, out=args.out)
    return cfg, cfg.model()


def finish(res, cfg):
    res.write(cfg.out)
    for line in res.audit_lines():
        print(line)
    print(f"results written to {cfg.out}")
    return 0 if res.passed else 1
