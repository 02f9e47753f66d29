"""Spatio-temporal change-of-support estimation for areal survey data.

Takes published survey estimates with known sampling variances on mixed
geographies and period lengths, fits a hierarchical Bayesian mixed-effects
model with a bisquare spatio-temporal basis, and predicts the latent
process (mean and uncertainty) on arbitrary user-defined target supports.
"""

from .basis import (BasisSystem, DesignRow, aggregate_period, build_design,
                    build_target_Psi, eval_point, integrate_area)
from .covariance import (MIPropagator, RandomEffectsCov, assemble_joint,
                         innovation_cov, mi_propagator, solve_K0,
                         stationary_cov, var_propagator)
from .errors import (ArtifactMismatchError, ConfigurationError, DomainError,
                     GeometryError, InputError, LinearAlgebraError,
                     StabilityError, StcosError)
from .geometry import (ArealUnit, KnotSet, SupportSet, build_adjacency,
                       overlap_fractions, space_filling_knots, uniform_sample)
from .model import (ChainConfig, FittedModelInputs, ModelConfig,
                    ProcessParams, SurveyDatum, assemble, collapsed_loglik,
                    log_joint)
from .pipeline import BasisConfig, FitResult, fit_model
from .predict import (GridPoint, HoldoutSpec, PredictionRecord, TargetQuery,
                      holdout_search, predict, ratio_diagnostic)
from .sampler import (PosteriorDraws, effective_sample_size, gibbs_step,
                      run_chain, split_rhat)

__version__ = "0.1.0"

__all__ = [
    "ArealUnit", "SupportSet", "KnotSet", "overlap_fractions",
    "uniform_sample", "build_adjacency", "space_filling_knots",
    "BasisSystem", "DesignRow", "eval_point", "integrate_area",
    "aggregate_period", "build_design", "build_target_Psi",
    "MIPropagator", "RandomEffectsCov", "mi_propagator", "var_propagator",
    "innovation_cov", "stationary_cov", "assemble_joint", "solve_K0",
    "SurveyDatum", "ProcessParams", "ModelConfig", "ChainConfig",
    "FittedModelInputs", "assemble", "log_joint", "collapsed_loglik",
    "PosteriorDraws", "gibbs_step", "run_chain", "effective_sample_size",
    "split_rhat",
    "TargetQuery", "PredictionRecord", "predict", "ratio_diagnostic",
    "GridPoint", "HoldoutSpec", "holdout_search",
    "BasisConfig", "FitResult", "fit_model",
    "StcosError", "GeometryError", "DomainError", "ConfigurationError",
    "StabilityError", "LinearAlgebraError", "InputError",
    "ArtifactMismatchError",
]
