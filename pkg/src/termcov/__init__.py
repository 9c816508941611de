"""Realized covariation of forward-curve increments from bond panels."""

from .errors import ConfigError, DataError, NumericalError, TermcovError
from .curve_panel import (
    DifferenceReturnPanel,
    ForwardPanel,
    GridSpec,
    LogBondPanel,
    YieldPanel,
    difference_returns,
    forwards_to_log_prices,
    higher_order_difference_returns,
    log_prices_to_yields,
    project_onto_pcs,
    read_yields_csv,
    write_panel_csv,
    yields_to_log_prices,
)
from .kernel_space import (
    SpectralDecomposition,
    StepKernel,
    dimension_profile,
    eigendecompose,
    explained_dimension,
    hs_norm,
    project_kernel,
    relative_error,
)
from .truncation_rule import (
    MahalanobisParams,
    PreliminaryEstimate,
    TruncationSpec,
    build_rule,
    g_l2,
    g_mahalanobis,
    niqr,
    preliminary_estimate,
)
from .covariation import (
    CovariationResult,
    LongRunVolatility,
    clt_asymptotic_variance,
    clt_entry_variance,
    long_time_average,
    realized_covariation,
    truncated_covariation,
    yearwise_covariations,
)
from .simulator import (
    CirParams,
    ObservationSet,
    SimConfig,
    exp_cov_matrix,
    gaussian_cov_matrix,
    integrated_volatility,
    model_preset,
    observe,
    presmooth,
    simulate_cir,
    simulate_forward_panel,
)

__version__ = "0.1.0"
