"""Shared test utilities: draw data from a model at given coefficients."""
import numpy as np

from ordcop import copulas
from ordcop.likelihood import linear_predictors
from ordcop.margins import expand_cutpoints
from ordcop.model import ModelSpec, intercept, linear, spline
from ordcop.predictor import build_design
from ordcop.simstudy import sample_responses

FAMILIES = ["gaussian", "clayton", "clayton180", "frank", "gumbel", "gumbel180", "joe", "joe180",
            "fgm", "amh", "plackett", None]
LINKS = ["probit", "logit"]
MARGINS = ["lognormal", "normal", "gamma"]


def small_spec(copula, link, margin):
    return ModelSpec("y1", "y2", mu1=(linear("x1"), spline("x2", 6)),
                     mu2=(intercept(), linear("x1")), sigma2=(intercept(), linear("x2")),
                     gamma=(intercept(), linear("x1")), copula=copula, link=link, margin=margin)


def simulated_design(copula, link, margin, rng, n=80, beta_scale=0.3):
    """Design with responses drawn from the model itself, plus its coefficients.

    Three ordinal categories; the dependence intercept corresponds to a
    moderate Kendall's tau.
    """
    spec = small_spec(copula, link, margin)
    data = {"y1": np.r_[1, 2, 3, np.ones(n - 3)].astype(int),
            "x1": rng.normal(size=n), "x2": rng.uniform(-2, 2, n), "y2": np.ones(n)}
    des = build_design(spec, data)
    beta = rng.normal(scale=beta_scale, size=des.n_coef)
    beta[:2] = [-0.7, 0.9]
    if copula is not None:
        fam = copulas.as_family(copula).family.value
        tau = 0.15 if fam in ("fgm", "amh") else 0.3
        beta[des.slices["gamma"].start] = copulas.gamma_link(copula,
                                                             copulas.tau_to_gamma(copula, tau))
    cuts = expand_cutpoints(beta[:des.n_cut]).theta
    for _ in range(50):
        eta = linear_predictors(beta, des)
        y1, y2, _, _ = sample_responses(copula, link, margin, cuts, eta, rng)
        if len(set(y1)) == 3:
            break
    return des.with_responses(y1, y2), beta


def relative_error(analytic, numeric):
    """Max of |a - b| / max(|a|, 1), the criterion used for derivative checks."""
    a = np.asarray(analytic)
    return float(np.max(np.abs(a - np.asarray(numeric)) / np.maximum(np.abs(a), 1.0)))
