"""Time-scale sweep: policy values against the limit BSDE at fixed eta."""

import sys

from _common import finish, parse
from twoscale import harness

if __name__ == "__main__":
    cfg, model = parse(__doc__)
    sys.exit(finish(harness.run_epsilon_sweep(cfg, model), cfg))
