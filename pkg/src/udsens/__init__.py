"""Log-likelihood gradients of linear Gaussian state-space models via UD array filtering.

The UD pipeline propagates ``P = U D U^T`` with modified weighted Gram-Schmidt
orthogonalization and differentiates the orthogonalization itself, so the
score is computed without ever forming ``P`` or inverting ``R_e``.
"""

from .baseline import conv_loglik_and_gradient
from .errors import FilterError
from .linalg import UDFactors, mod_cholesky, ud_of_covariance
from .mle import EstimationResult, Objective, evaluate, minimize, scan
from .models import build_model, illcond_model, ins_model, simulate
from .mwgs import PreArrayPair, mwgs_derivative, mwgs_orthogonalize
from .sensitivity import ModelDerivativesAtTheta, ud_loglik_and_gradient
from .statespace import StateSpace
from .udfilter import ModelAtTheta, ud_loglik

__version__ = "0.1.0"

__all__ = [
    "EstimationResult",
    "FilterError",
    "ModelAtTheta",
    "ModelDerivativesAtTheta",
    "Objective",
    "PreArrayPair",
    "StateSpace",
    "UDFactors",
    "build_model",
    "conv_loglik_and_gradient",
    "evaluate",
    "illcond_model",
    "ins_model",
    "minimize",
    "mod_cholesky",
    "mwgs_derivative",
    "mwgs_orthogonalize",
    "scan",
    "simulate",
    "ud_loglik",
    "ud_loglik_and_gradient",
    "ud_of_covariance",
]
