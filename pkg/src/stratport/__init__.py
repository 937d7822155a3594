"""Condition-stratified return and risk models with Laplacian smoothing,
a Markowitz-style trading policy, and a cost-aware backtest harness."""

from .backtest import (
    BacktestResult,
    FactorRegression,
    PerformanceReport,
    accounting_step,
    factor_regression,
    performance_metrics,
    run_backtest,
    trailing_half_spread,
)
from .fitting import (
    HUBER_MEAN,
    LOGDET_PRECISION,
    FitConfig,
    FitResult,
    LaplacianSolver,
    StratumDataset,
    eval_objective,
    fit,
    laplacian_penalty,
    solve_regularized_laplacian,
)
from .grid import (
    MarketCondition,
    QuantileBins,
    RegularizationGraph,
    assign_condition,
    assign_conditions,
    build_product_chain_graph,
    compute_quantile_bins,
    coords_from_flat,
    flat_index,
    weighted_laplacian,
)
from .losses import huber, huber_loss, logdet_loss, prox_huber_mean, prox_logdet_precision
from .models import (
    MeanModel,
    PrecisionModel,
    common_mean,
    common_precision,
    correlation_summary,
    fit_return_model,
    fit_risk_model,
    load_model,
    mean_summary,
    save_model,
    validation_correlation,
    validation_nll,
    volatility_summary,
)
from .policy import (
    PolicyInput,
    PolicyParams,
    PolicySolution,
    augment_with_benchmark,
    default_params,
    policy_objective,
    solve_policy,
)
from .tuner import Grid, TuneResult, grid_search, log_spaced

__version__ = "0.1.0"
