"""Policy search, limit BSDE and reduced control estimates of the limit value."""

import sys

from _common import finish, parse
from twoscale import harness

if __name__ == "__main__":
    cfg, model = parse(__doc__)
    sys.exit(finish(harness.run_interchange(cfg, model), cfg))
