"""Vanishing-noise sweep: |V(eps, eta) - V(eps, 0)| against eta with log-log slopes."""

import sys

from _common import finish, parse
from twoscale import harness

if __name__ == "__main__":
    cfg, model = parse(__doc__)
    sys.exit(finish(harness.run_eta_sweep(cfg, model), cfg))
