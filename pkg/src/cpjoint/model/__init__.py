"""Joint change-point model: records, densities, transforms, log posterior."""
from .densities import (
    correlation_logprior,
    gnd_logpdf,
    longitudinal_loglik,
    piecewise_mean,
    weibull_ph_logpdf,
    weibull_ph_logsurv,
)
from .posterior import JointModel, NonFiniteLogPosterior
from .records import (
    RE_NAMES,
    DEFAULT_TRUTH,
    ModelParams,
    PriorConfig,
    SubjectError,
    SubjectRecord,
    validate_subjects,
)
from .transforms import DecodeError, DecodedState, corr_cholesky, corr_cholesky_inverse

__all__ = [
    "RE_NAMES", "DEFAULT_TRUTH", "ModelParams", "PriorConfig", "SubjectError",
    "SubjectRecord", "validate_subjects", "JointModel", "NonFiniteLogPosterior",
    "DecodeError", "DecodedState", "corr_cholesky", "corr_cholesky_inverse",
    "correlation_logprior", "gnd_logpdf", "longitudinal_loglik", "piecewise_mean",
    "weibull_ph_logpdf", "weibull_ph_logsurv",
]
