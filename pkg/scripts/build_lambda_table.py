"""Build the ergodic and conjugate tables, write them as CSV and audit them."""

import sys
from pathlib import Path

from _common import finish, parse
from twoscale import harness

if __name__ == "__main__":
    cfg, model = parse(__doc__)
    tables = harness.prepare_tables(model, cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    tables.lam.to_csv(out / "lambda_table.csv")
    tables.leg.to_csv(out / "legendre_table.csv")
    res = harness.table_audits(model, tables, harness.SweepResult("tables"), cfg.legendre.n_z)
    sys.exit(finish(res, cfg))
