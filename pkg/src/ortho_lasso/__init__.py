"""Cross-fitted lasso inference for one scalar coefficient, with an
inverse-Gram debiasing step, a generic higher-order orthogonal moment
construction, and a Monte Carlo harness."""

from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    DegenerateInputError,
    DegenerateResidualError,
    NonPositiveDefiniteError,
    NumericalError,
    OrthoLassoError,
    ZeroVarianceColumnError,
)
from .estimators import (
    Dataset,
    DmlEstimate,
    EstimateConfig,
    EstimateResult,
    FoldPlan,
    estimate,
    make_folds,
)
from .lasso import LassoFit, LassoProblem, fit_lasso, kkt_residual
from .orthomoments import (
    LiftedSystem,
    MomentSystem,
    certify_orthogonality,
    lift,
    single_index_Ftilde,
    squared_loss,
)
from .penalty import FoldPenalties, PenaltyConfig, bcch_lambda, fold_penalties
from .population import GaussianLinearDesign
from .simkit import (
    MetricsRow,
    ReplicationRecord,
    SimDesign,
    compute_metrics,
    draw_dataset,
    run_grid,
    run_replication,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "ConfigError",
    "ConvergenceError",
    "DataError",
    "DegenerateInputError",
    "DegenerateResidualError",
    "NonPositiveDefiniteError",
    "NumericalError",
    "OrthoLassoError",
    "ZeroVarianceColumnError",
    "Dataset",
    "DmlEstimate",
    "EstimateConfig",
    "EstimateResult",
    "FoldPlan",
    "estimate",
    "make_folds",
    "LassoFit",
    "LassoProblem",
    "fit_lasso",
    "kkt_residual",
    "LiftedSystem",
    "MomentSystem",
    "certify_orthogonality",
    "lift",
    "single_index_Ftilde",
    "squared_loss",
    "FoldPenalties",
    "PenaltyConfig",
    "bcch_lambda",
    "fold_penalties",
    "GaussianLinearDesign",
    "MetricsRow",
    "ReplicationRecord",
    "SimDesign",
    "compute_metrics",
    "draw_dataset",
    "run_grid",
    "run_replication",
]
