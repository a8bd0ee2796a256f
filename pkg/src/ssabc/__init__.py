"""Score-based approximate Bayesian computation for state space models.

Simulation-based posterior inference where the likelihood is
intractable but the model is easy to simulate: draw parameters from the
prior, simulate, and keep the draws whose auxiliary-model scores (or
summary statistics) land closest to those of the observed series.
Ships the two workhorse examples — a linear Gaussian state space model
with an exact Kalman reference, and a square-root stochastic volatility
model with exact non-central chi-squared transitions — plus the
filters, matching criteria and evaluation tooling to compare methods.
"""

from .auxiliary import (
    AuxiliaryModel,
    FittedAux,
    fit_mle,
    heston_auxiliary_model,
    integrated_loglik,
    lg_auxiliary_model,
    marginal_mle,
    marginal_score,
    score,
)
from .config import ExperimentConfig, load_config
from .errors import (
    ConditioningError,
    ConfigError,
    DegenerateSampleError,
    DegeneratePriorError,
    FitError,
    NumericalError,
    ParameterError,
    RunError,
    SupportError,
)
from .evaluate import PosteriorGrid, ReplicationReport, exact_posterior, kde, percentiles, replicate, rmse
from .experiments import Experiment, run_table1
from .filters import (
    GridSpec,
    aukf_loglik,
    grid_filter_loglik,
    kalman_loglik,
    lg_grid_filter_loglik,
    make_sigma_points,
)
from .models import (
    HestonParams,
    LgParams,
    UniformPrior,
    ar1_summary_stats,
    cir_sample_transition,
    cir_transition_density,
    simulate_heston,
    simulate_lg,
)
from .rejection import (
    AbcConfig,
    AbcRun,
    FpRegression,
    abc_rejection,
    dist_joint_score,
    dist_marginal_score,
    dist_mle,
    dist_summ_euclid,
    fp_distance,
    fp_fit,
    select_accepted,
)
from .streams import stream

__version__ = "0.1.0"

__all__ = [
    "AbcConfig",
    "AbcRun",
    "AuxiliaryModel",
    "ConditioningError",
    "ConfigError",
    "DegeneratePriorError",
    "DegenerateSampleError",
    "Experiment",
    "ExperimentConfig",
    "FitError",
    "FittedAux",
    "FpRegression",
    "GridSpec",
    "HestonParams",
    "LgParams",
    "NumericalError",
    "ParameterError",
    "PosteriorGrid",
    "ReplicationReport",
    "RunError",
    "SupportError",
    "UniformPrior",
    "abc_rejection",
    "ar1_summary_stats",
    "aukf_loglik",
    "cir_sample_transition",
    "cir_transition_density",
    "dist_joint_score",
    "dist_marginal_score",
    "dist_mle",
    "dist_summ_euclid",
    "exact_posterior",
    "fit_mle",
    "fp_distance",
    "fp_fit",
    "grid_filter_loglik",
    "heston_auxiliary_model",
    "integrated_loglik",
    "kalman_loglik",
    "kde",
    "lg_auxiliary_model",
    "lg_grid_filter_loglik",
    "load_config",
    "make_sigma_points",
    "marginal_mle",
    "marginal_score",
    "percentiles",
    "replicate",
    "rmse",
    "run_table1",
    "score",
    "select_accepted",
    "simulate_heston",
    "simulate_lg",
    "stream",
    "__version__",
]
