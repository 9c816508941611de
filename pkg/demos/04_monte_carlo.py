"""A small Monte Carlo study across the benchmark models.

The acceptance suite runs the full-size version with 100 replications. This
demo uses 10 replications of the dense and jump models so it finishes in
well under a minute.
"""

# %%
from termcov.harness import McModel, mc_run

# %%
models = [
    McModel.preset("M1"),
    McModel.preset("M3", levels=(3, 4, 5)),
    McModel.preset("M1", scenario="S2"),
]
summary = mc_run(models, replications=10, master_seed=1)
print(f"wall clock {summary.wall_clock:.1f}s")

# %% [markdown]
# Each row reports the median relative error with its quartiles, and the
# median number of eigenfunctions needed to explain 85, 90, 95 and 99% of
# the estimated kernel.

# %%
for row in summary.table_rows():
    print(
        f"{row['model']:3s} {row['scenario']} l={row['level']:>3s}  "
        f"rE {row['rE_median']:.3f} ({row['rE_q1']:.3f}, {row['rE_q3']:.3f})  "
        f"D99 {row['D99_median']:g}"
    )
