"""Multilevel Monte Carlo estimation with moment-aware sample allocation
and a noise-aware trust-region optimizer for design under uncertainty."""

from .allocation import (
    Allocation,
    AllocationTarget,
    Allocator,
    BudgetExceededError,
    EstimateWithError,
    allocate,
    allocate_analytic_approximation,
    allocate_mean_analytic,
    allocate_numerical,
    iterate_allocation,
)
from .experiments import (
    ConfigError,
    ExperimentConfig,
    derive_epsilon,
    dist_center,
    dist_rmsdev,
    dist_sigma,
    exact_statistic,
    mc_estimate,
    ouu_study,
    run_allocate,
    run_derive_epsilon,
    sampling_study,
)
from .mlmc import (
    BootstrapConfig,
    CovStrategy,
    LevelMomentSummary,
    LevelSummary,
    NegativeVarianceError,
    StatKind,
    StatTarget,
    build_summary,
    estimate_statistic,
    mlmc_mean,
    mlmc_scalarization,
    mlmc_stddev,
    mlmc_variance,
    predict_var_mean,
    predict_var_scalarization,
    predict_var_stddev,
    predict_var_variance,
    predict_variance,
    summary_statistic,
)
from .optimizer import OptimizeResult, TrustRegionConfig, optimize
from .problems import MultilevelProblem, get_problem
from .sampling import (
    CoupledLevelSamples,
    CoupledSampleSet,
    draw_coupled_samples,
    new_sample_set,
)
from .streams import substream, uniform_block

__version__ = "0.1.0"

__all__ = [
    "Allocation",
    "AllocationTarget",
    "Allocator",
    "BootstrapConfig",
    "BudgetExceededError",
    "ConfigError",
    "CoupledLevelSamples",
    "CoupledSampleSet",
    "CovStrategy",
    "EstimateWithError",
    "ExperimentConfig",
    "LevelMomentSummary",
    "LevelSummary",
    "MultilevelProblem",
    "NegativeVarianceError",
    "OptimizeResult",
    "StatKind",
    "StatTarget",
    "TrustRegionConfig",
    "allocate",
    "allocate_analytic_approximation",
    "allocate_mean_analytic",
    "allocate_numerical",
    "build_summary",
    "derive_epsilon",
    "dist_center",
    "dist_rmsdev",
    "dist_sigma",
    "draw_coupled_samples",
    "estimate_statistic",
    "exact_statistic",
    "get_problem",
    "iterate_allocation",
    "mc_estimate",
    "mlmc_mean",
    "mlmc_scalarization",
    "mlmc_stddev",
    "mlmc_variance",
    "new_sample_set",
    "optimize",
    "ouu_study",
    "predict_var_mean",
    "predict_var_scalarization",
    "predict_var_stddev",
    "predict_var_variance",
    "predict_variance",
    "run_allocate",
    "run_derive_epsilon",
    "sampling_study",
    "substream",
    "summary_statistic",
    "uniform_block",
]
