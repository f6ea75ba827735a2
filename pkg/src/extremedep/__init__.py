"""Parametric angular-measure models for multivariate extremes."""

from .errors import (ConfigError, DataError, DomainError, EstimationError, ExtremeDepError,
                     NumericError, QuadratureError, TransformError, UnsupportedError,
                     ValidationError)
from .margins import (MarginalModel, PseudoPolarSample, fit_gpd_margin, fit_margins,
                      select_extremes, to_pseudo_polar, to_unit_frechet)
from .models import (AsymmetricLogistic, ExtremalT, HuslerReiss, PairwiseBeta, TiltedDirichlet,
                     angular_density, exponent_function, face_density, make_model, pickands,
                     sample_angular, tail_dependence_fn, vertex_mass)
from .mvgauss import mvn_cdf, mvt_cdf, partial_corr_et, partial_corr_hr
from .simplex import integrate_simplex
from .summaries import (FailureEvent, chi_coefficient, extremal_coefficient, joint_return_level,
                        prob_failure_region, prob_union_exceed)
from .inference import FitResult, bic, fit_mle, log_likelihood, select_model, tic
from .bayes import PosteriorChain, default_prior, geweke, heidelberger_welch, mh_sample

__version__ = "0.1.0"

__all__ = [
    "AsymmetricLogistic", "TiltedDirichlet", "PairwiseBeta", "HuslerReiss", "ExtremalT",
    "make_model", "angular_density", "face_density", "vertex_mass", "exponent_function",
    "pickands", "tail_dependence_fn", "sample_angular", "integrate_simplex",
    "mvn_cdf", "mvt_cdf", "partial_corr_hr", "partial_corr_et",
    "MarginalModel", "PseudoPolarSample", "fit_gpd_margin", "fit_margins", "to_unit_frechet",
    "to_pseudo_polar", "select_extremes",
    "FailureEvent", "extremal_coefficient", "chi_coefficient", "prob_union_exceed",
    "prob_failure_region", "joint_return_level",
    "FitResult", "fit_mle", "log_likelihood", "tic", "bic", "select_model",
    "PosteriorChain", "default_prior", "mh_sample", "geweke", "heidelberger_welch",
    "ExtremeDepError", "ValidationError", "ConfigError", "DataError", "DomainError",
    "EstimationError", "TransformError", "NumericError", "QuadratureError", "UnsupportedError",
]
