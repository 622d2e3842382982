"""snipdyn: reconstruct the time-evolving distribution of a latent
stochastic process from sparse longitudinal snippets.

The workflow is: load or synthesize snippet data, fit a conditional
mean/variance model on consecutive-measurement pairs, then iterate the
one-step conditional law forward from an initial state to obtain path
ensembles and percentile bands.
"""

from .dataset import (
    InsufficientDataError,
    ModeMismatchError,
    ParseError,
    SchemaError,
    SnippetDataset,
    SnippetRecord,
    TimeMap,
    TrainingPair,
    ValidationError,
    load_snippets,
    make_training_pairs,
    save_snippets,
)
from .evaluate import (
    StudyConfig,
    StudyResult,
    loglog_slope,
    rmse_terminal,
    rmse_trajectory,
    run_study,
    wasserstein_empirical,
    wasserstein_gaussian,
)
from .processes import (
    AnalyticConditionalModel,
    GaussianProcessSpec,
    InconsistentConditioningError,
    conditional_moments,
    cov_fn,
    exact_simulate,
    lipschitz_constant,
    mean_fn,
)
from .reconstruct import (
    EnsembleError,
    NormalDraws,
    PathEnsemble,
    PercentileCurves,
    TimeGrid,
    flag_observation,
    percentile_curves,
    simulate_paths,
)
from .regression import (
    BandwidthGrid,
    BandwidthGridError,
    ConditionalModel,
    SingularDesignError,
    fit_local_linear,
    fit_ols,
    load_model,
    loocv_score,
    save_model,
)
from .synth import synth_snippets

__version__ = "0.1.0"

__all__ = [
    "AnalyticConditionalModel",
    "BandwidthGrid",
    "BandwidthGridError",
    "ConditionalModel",
    "EnsembleError",
    "GaussianProcessSpec",
    "InconsistentConditioningError",
    "InsufficientDataError",
    "ModeMismatchError",
    "NormalDraws",
    "ParseError",
    "PathEnsemble",
    "PercentileCurves",
    "SchemaError",
    "SnippetDataset",
    "SnippetRecord",
    "SingularDesignError",
    "StudyConfig",
    "StudyResult",
    "TimeGrid",
    "TimeMap",
    "TrainingPair",
    "ValidationError",
    "conditional_moments",
    "cov_fn",
    "exact_simulate",
    "fit_local_linear",
    "fit_ols",
    "flag_observation",
    "lipschitz_constant",
    "load_model",
    "load_snippets",
    "loglog_slope",
    "loocv_score",
    "make_training_pairs",
    "mean_fn",
    "percentile_curves",
    "rmse_terminal",
    "rmse_trajectory",
    "run_study",
    "save_model",
    "save_snippets",
    "simulate_paths",
    "synth_snippets",
    "wasserstein_empirical",
    "wasserstein_gaussian",
]
