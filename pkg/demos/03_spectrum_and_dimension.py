"""Eigenfunctions, explained dimension and low-rank projections of a kernel."""

# %%
import numpy as np

from termcov import (
    GridSpec,
    StepKernel,
    dimension_profile,
    eigendecompose,
    gaussian_cov_matrix,
    hs_norm,
    project_kernel,
    relative_error,
)

# %% [markdown]
# Build the cell kernel of a normalized Gaussian covariance for two
# bandwidths. Larger bandwidths decorrelate distant maturities faster and need
# more components.

# %%
grid = GridSpec(0.01, 100, 10.0)
for a in (5.0, 50.0):
    Q = gaussian_cov_matrix(a, grid, grid.m_cells)
    k = StepKernel(Q / grid.delta_n**2, grid.delta_n)
    spec = eigendecompose(k, n_components=12)
    share = spec.eigenvalues / np.sum(eigendecompose(k).eigenvalues)
    print(f"a={a:g}: HS norm {hs_norm(k):.4f}")
    print("  leading shares", np.round(share[:6], 3))
    print("  dimensions for 85/90/95/99%:", dimension_profile(k, (0.85, 0.90, 0.95, 0.99)))

# %% [markdown]
# Projecting onto the leading eigenfunctions is optimal among subspaces of
# the same dimension. The eigenbasis of the smoother bandwidth-5 kernel is a
# plausible but misaligned alternative and does worse.

# %%
def cell_kernel(a):
    return StepKernel(gaussian_cov_matrix(a, grid, grid.m_cells) / grid.delta_n**2, grid.delta_n)


k = cell_kernel(50.0)
own = eigendecompose(k, n_components=10)
other = eigendecompose(cell_kernel(5.0), n_components=10)
for dim in (2, 5, 10):
    best = relative_error(project_kernel(k, own.top(dim)), k)
    alt = relative_error(project_kernel(k, other.top(dim)), k)
    print(f"d={dim:2d}: own eigenbasis {best:.3f}  bandwidth-5 eigenbasis {alt:.3f}")
