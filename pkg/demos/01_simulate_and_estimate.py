"""Simulate a forward-curve panel and estimate its quadratic covariation.

Runs in a few seconds on a one-year, two-year-maturity grid.
"""

# %%
import numpy as np

from termcov import (
    GridSpec,
    SimConfig,
    difference_returns,
    hs_norm,
    integrated_volatility,
    realized_covariation,
    relative_error,
    simulate_forward_panel,
)

# %% [markdown]
# A daily grid over one year with maturities up to two years. Every maturity
# is observed, so log prices come straight from the simulated forward cells.

# %%
grid = GridSpec(delta_n=0.01, n_steps=100, max_maturity=2.0)
cfg = SimConfig(grid=grid, a=50.0, m_obs=grid.m_cells + 1, seed=11)
sim = simulate_forward_panel(cfg)
logp = sim.log_prices()
print("log-price panel:", logp.values.shape)

# %% [markdown]
# Difference returns remove the deterministic roll-down of the curve. Each
# row is the gain from holding a long position in one bond and a short one in
# its neighbour over a single step.

# %%
d = difference_returns(logp)
print("difference returns:", d.values.shape)
print("largest absolute return: %.2e" % np.abs(d.values).max())

# %% [markdown]
# The realized covariation is a step kernel on the maturity cells. Compare it
# with the covariation the simulation actually generated.

# %%
q_hat = realized_covariation(d)
q_true = integrated_volatility(sim)
print("HS norm estimate %.4f, truth %.4f" % (hs_norm(q_hat), hs_norm(q_true)))
print("relative HS error %.3f" % relative_error(q_hat, q_true))

# %% [markdown]
# Doubling the sampling frequency over the same year roughly shrinks the
# error by a factor of sqrt(2).

# %%
for n in (50, 100, 200):
    g = GridSpec.from_horizon(1.0 / n, 1.0, 2.0)
    errs = []
    for seed in range(10):
        s = simulate_forward_panel(SimConfig(grid=g, m_obs=g.m_cells + 1, subres=1, seed=seed))
        errs.append(relative_error(realized_covariation(difference_returns(s.log_prices())), integrated_volatility(s)))
    print(f"n={n:4d}  median relative error {np.median(errs):.3f}")
