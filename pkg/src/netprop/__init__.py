"""Network propensity score estimation of treatment and spillover effects."""
from .core import GroupData, NetworkPanel, NetworkPropensityScore, RandomCoefficients, Regressors
from .dgp import DgpConfig, SimulatedPanel, simulate
from .estimator import EstimatorOptions, estimate, estimate_tau, fit_theta, prepare
from .nps import ScoreParams, iw_kernel, qxx_closed

__version__ = "0.1.0"

__all__ = [
    "DgpConfig", "EstimatorOptions", "GroupData", "NetworkPanel", "NetworkPropensityScore",
    "RandomCoefficients", "Regressors", "ScoreParams", "SimulatedPanel", "estimate",
    "estimate_tau", "fit_theta", "iw_kernel", "prepare", "qxx_closed", "simulate",
]
