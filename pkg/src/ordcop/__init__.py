"""Bivariate copula distributional regression for an ordinal and a continuous response."""
from .copulas import CopulaFamily, copula_derivatives, kendall_tau, tau_to_gamma
from .estimator import FitOptions, FitResult, fit, fit_pair
from .model import ModelSpec, TermSpec, intercept, linear, mrf, random_effect, spline
from .predictor import build_design

__version__ = "0.1.0"

__all__ = [
    "CopulaFamily", "FitOptions", "FitResult", "ModelSpec", "TermSpec", "build_design",
    "copula_derivatives", "fit", "fit_pair", "intercept", "kendall_tau", "linear", "mrf",
    "random_effect", "spline", "tau_to_gamma",
]
