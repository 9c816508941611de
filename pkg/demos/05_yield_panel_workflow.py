"""From a long-format yield CSV to yearwise jump and dimension tables.

A synthetic two-year panel stands in for an external yield dataset. The
same steps run through the command line with ``termcov report``.
"""

# %%
import datetime
import tempfile
from pathlib import Path

import numpy as np

from termcov import (
    GridSpec,
    SimConfig,
    difference_returns,
    hs_norm,
    log_prices_to_yields,
    read_yields_csv,
    simulate_forward_panel,
    yields_to_log_prices,
)
from termcov.harness import empirical_run, rmae_study

# %% [markdown]
# Write a simulated yield panel in the ``date,maturity_years,yield`` format,
# one row per date and maturity, on business-day-like dates.

# %%
grid = GridSpec.from_horizon(1 / 100, 2.0, 2.0)
sim = simulate_forward_panel(SimConfig(grid=grid, m_obs=grid.m_cells + 1, lambda1=2.0, rho1=0.0116, subres=10, seed=5))
yields = log_prices_to_yields(sim.log_prices())

tmp = Path(tempfile.mkdtemp())
csv_path = tmp / "yields.csv"
start = datetime.date(2019, 1, 1)
with csv_path.open("w") as fh:
    fh.write("date,maturity_years,yield\n")
    for i, row in enumerate(yields.values):
        day = (start + datetime.timedelta(days=round(i * 364 / 100))).isoformat()
        for j in range(1, row.size):
            fh.write(f"{day},{j * grid.delta_n:.2f},{row[j]:.10f}\n")
print("wrote", csv_path)

# %% [markdown]
# Load it back. The calendar year of each return's start date defines the
# estimation periods.

# %%
panel = read_yields_csv(csv_path, delta_n=grid.delta_n)
logp = yields_to_log_prices(panel)
d = difference_returns(logp)
report, long_run = empirical_run(d, (3, 4, 5))
for r in report.rows:
    print(
        f"{r.label}: {r.rows} rows, flags l=3/4/5 {r.flags[3.0]}/{r.flags[4.0]}/{r.flags[5.0]}, "
        f"kept share {r.ratios[3.0]:.3f}, dimensions {r.dims_own}"
    )
print("long-run HS norm %.4f" % hs_norm(long_run.kernel))

# %% [markdown]
# Project lagged difference returns onto principal components of log-price
# changes and onto the long-run eigenfunctions.

# %%
table = rmae_study(logp, lags=(0, 10), d_range=range(1, 6), per_period=10, long_run=long_run)
for lag in (0, 10):
    for src in ("log-price-pcs", "long-run-eigen"):
        vals = [table.value(lag, src, k) for k in range(1, 6)]
        print(f"lag {lag:2d} {src:15s}", np.round(vals, 4))
