"""Simulation study of the bivariate ordinal-continuous model.

Four scenarios cross two continuous margins (log-normal, gamma) with two
copulas (Gaussian, Joe).  Covariates are uniform on [-2, 2]; three smooth
functions enter the predictors:

    s1(x) = x sin(3x),   s2(x) = sin(2x) + x/2,   s3(x) = 3x cos(x).

True predictors (our canonical choice; every predictor stays within about
[-3, 3] on the covariate range):

    eta_mu1    = 1.0 x1 + s1(nu1) + s2(nu2),           cut points (-1, 1)
    eta_mu2    = 0.5 + 1.0 x1 - 1.0 x2 + s3(nu1)
    eta_sigma2 = -0.5 + 0.3 x3
    eta_gamma  = gamma*(tau = 0.3) + s3(nu2)

where gamma*(tau = 0.3) is the working-scale copula parameter whose Kendall's
tau is 0.3.
"""
from __future__ import annotations

import logging
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from . import copulas
from .copulas import h_inverse
from .estimator import FitOptions, NonConvergence, fit_pair
from .margins import ContinuousMargin, OrdinalMargin
from .model import ModelSpec, intercept, linear, spline

log = logging.getLogger(__name__)


class StudyAborted(RuntimeError):
    pass


def s1(x):
    x = np.asarray(x, dtype=float)
    return x * np.sin(3 * x)


def s2(x):
    x = np.asarray(x, dtype=float)
    return np.sin(2 * x) + 0.5 * x


def s3(x):
    x = np.asarray(x, dtype=float)
    return 3 * x * np.cos(x)


@dataclass(frozen=True)
class TrueParams:
    cuts: tuple = (-1.0, 1.0)
    beta_mu1: float = 1.0                 # x1
    beta_mu2: tuple = (0.5, 1.0, -1.0)    # intercept, x1, x2
    beta_sigma2: tuple = (-0.5, 0.3)      # intercept, x3
    tau: float = 0.3                      # dependence intercept on the tau scale
    gamma_smooth: bool = True
    mu2_smooth: bool = True
    mu1_smooths: bool = True

    def linear_coefficients(self) -> dict:
        """True values of the slopes, keyed by design coefficient name."""
        return {"mu1:x1": self.beta_mu1, "mu2:x1": self.beta_mu2[1],
                "mu2:x2": self.beta_mu2[2], "sigma2:x3": self.beta_sigma2[1]}


SCENARIOS = {
    1: ("lognormal", "gaussian"),
    2: ("gamma", "gaussian"),
    3: ("lognormal", "joe"),
    4: ("gamma", "joe"),
}


@dataclass(frozen=True)
class Scenario:
    id: int
    n: int = 1000
    n_rep: int = 100
    seed: int = 0
    truth: TrueParams = TrueParams()

    def __post_init__(self):
        if self.id not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.id}; choose from {sorted(SCENARIOS)}")
        if self.n < 1:
            raise ValueError("n must be positive")

    @property
    def margin(self) -> str:
        return SCENARIOS[self.id][0]

    @property
    def copula(self) -> str:
        return SCENARIOS[self.id][1]


def true_predictors(scenario: Scenario, data) -> dict:
    t = scenario.truth
    x1, x2, x3 = (np.asarray(data[k], dtype=float) for k in ("x1", "x2", "x3"))
    nu1, nu2 = np.asarray(data["nu1"], dtype=float), np.asarray(data["nu2"], dtype=float)
    mu1 = t.beta_mu1 * x1 + (s1(nu1) + s2(nu2) if t.mu1_smooths else 0.0)
    mu2 = t.beta_mu2[0] + t.beta_mu2[1] * x1 + t.beta_mu2[2] * x2
    if t.mu2_smooth:
        mu2 = mu2 + s3(nu1)
    sig = t.beta_sigma2[0] + t.beta_sigma2[1] * x3
    g0 = copulas.gamma_link(scenario.copula, copulas.tau_to_gamma(scenario.copula, t.tau)) \
        if t.tau != 0 else copulas.gamma_link(scenario.copula, copulas.default_gamma(scenario.copula))
    gam = g0 + (s3(nu2) if t.gamma_smooth else 0.0)
    return {"mu1": mu1, "mu2": mu2 * np.ones_like(x1), "sigma2": sig,
            "gamma": gam * np.ones_like(x1)}


def true_smooths(scenario: Scenario, grid) -> dict:
    """True smooth curves on ``grid`` (uncentred), keyed like the fitted terms."""
    out = {"mu1:s(nu1)": s1(grid), "mu1:s(nu2)": s2(grid)}
    if scenario.truth.mu2_smooth:
        out["mu2:s(nu1)"] = s3(grid)
    if scenario.truth.gamma_smooth:
        out["gamma:s(nu2)"] = s3(grid)
    return out


def sample_responses(copula, link, margin, cuts, eta: dict, rng):
    """Draw (y1, y2, u, v) given predictor values.

    ``u`` is uniform, ``v`` solves ``dC/du(u, v) = w`` for uniform ``w``; the
    latent ordinal variable is ``F1^{-1}(u) + eta_mu1`` and the continuous
    response is the margin quantile of ``v``.
    """
    n = np.asarray(eta["mu1"]).size
    u = rng.uniform(size=n)
    w = rng.uniform(size=n)
    if copula is None:
        v = w
    else:
        gamma = copulas.gamma_unlink(copula, eta["gamma"])
        v = h_inverse(copula, w, u, gamma)
    v = np.clip(v, copulas.EPS, 1 - copulas.EPS)
    uc = np.clip(u, copulas.EPS, 1 - copulas.EPS)
    latent = OrdinalMargin(link, len(cuts) + 1).ppf(uc) + eta["mu1"]
    y1 = 1 + np.searchsorted(np.asarray(cuts), latent)
    y2 = ContinuousMargin(margin).ppf(v, eta["mu2"], eta["sigma2"])
    return y1, y2, u, v


def generate(scenario: Scenario, rep: int = 0, *, n: int | None = None) -> pd.DataFrame:
    """Generate one data set; the generator is seeded with ``[seed, rep]``."""
    n = scenario.n if n is None else n
    rng = np.random.default_rng([scenario.seed, rep])
    cols = {k: rng.uniform(-2, 2, n) for k in ("x1", "x2", "x3", "nu1", "nu2")}
    eta = true_predictors(scenario, cols)
    y1, y2, u, v = sample_responses(scenario.copula, "probit", scenario.margin,
                                    scenario.truth.cuts, eta, rng)
    return pd.DataFrame({"y1": y1, "y2": y2, **cols, "u": u, "v": v})


def study_spec(scenario: Scenario, copula=None, basis_dim: int = 10) -> ModelSpec:
    """Model fitted in the study: the true structure with penalized splines."""
    t = scenario.truth
    mu1 = (linear("x1"),) + ((spline("nu1", basis_dim), spline("nu2", basis_dim))
                             if t.mu1_smooths else ())
    mu2 = (intercept(), linear("x1"), linear("x2")) + (
        (spline("nu1", basis_dim),) if t.mu2_smooth else ())
    sigma2 = (intercept(), linear("x3"))
    gamma = (intercept(),) + ((spline("nu2", basis_dim),) if t.gamma_smooth else ())
    return ModelSpec("y1", "y2", mu1=mu1, mu2=mu2, sigma2=sigma2, gamma=gamma,
                     margin=scenario.margin, link="probit",
                     copula=scenario.copula if copula is None else copula)


GRID = np.linspace(-1.9, 1.9, 39)


def smooth_estimates(fit_result, grid=GRID) -> dict:
    """Fitted smooth curves on ``grid``, each shifted to mean zero over the grid."""
    design = fit_result.design
    out = {}
    for p, pd_ in design.params.items():
        pos = design.slices[p].start
        for t in pd_.terms:
            if t.spec.kind.value == "spline":
                B = t.basis({t.spec.covariate: grid}, grid.size)
                f = B @ fit_result.beta[pos:pos + t.n_cols]
                out[f"{p}:{t.spec.label}"] = f - f.mean()
            pos += t.n_cols
    return out


def _replicate(scenario: Scenario, rep: int, options: FitOptions, n=None) -> dict:
    data = generate(scenario, rep, n=n)
    spec = study_spec(scenario)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            biv, ind = fit_pair(spec, data, options)
            failed = None
        except Exception as exc:  # optimizer failures count as warnings
            biv = ind = None
            failed = f"{type(exc).__name__}: {exc}"
    warns = [str(w.message) for w in caught if issubclass(w.category, NonConvergence)]
    if failed:
        warns.append(failed)
    if biv is not None:
        warns += biv.warnings + ind.warnings
    rec = {"rep": rep, "n": data.shape[0], "warnings": sorted(set(warns))}
    if biv is None:
        return rec
    names = biv.coef_names
    truth = scenario.truth.linear_coefficients()
    rec["coefficients"] = {k: float(biv.beta[names.index(k)]) for k in truth}
    rec["truth"] = truth
    est = smooth_estimates(biv)
    true_s = true_smooths(scenario, GRID)
    rec["smooth_rmse"] = {k: float(np.sqrt(np.mean((est[k] - (true_s[k] - true_s[k].mean())) ** 2)))
                          for k in est if k in true_s}
    rec["aic"] = biv.aic
    rec["aic_independence"] = ind.aic
    rec["bic"] = biv.bic
    rec["bic_independence"] = ind.bic
    rec["edf"] = biv.edf
    rec["converged"] = biv.converged
    # dependence at the covariate point nu2 = 0 (smooth centred over data)
    rec["gamma_intercept"] = float(biv.beta[biv.design.slices["gamma"].start])
    return rec


def run_study(scenario: Scenario, options: FitOptions | None = None, *, n_jobs: int = 1,
              max_attempts_factor: int = 10) -> dict:
    """Fit ``n_rep`` clean replicates, redrawing those that raise warnings.

    Returns
    -------
    dict
        ``records`` (clean replicates), ``redrawn`` (count of discarded
        replicates), ``aic_share`` (fraction with bivariate AIC below the
        independence AIC), coefficient summaries and mean smooth RMSE.

    Raises
    ------
    StudyAborted
        When more than 90% of attempted replicates raise warnings.
    """
    from joblib import Parallel, delayed
    from threadpoolctl import threadpool_limits

    options = options or FitOptions()
    clean, redrawn = [], []
    next_rep = 0
    limit = max_attempts_factor * scenario.n_rep
    while len(clean) < scenario.n_rep:
        need = scenario.n_rep - len(clean)
        reps = list(range(next_rep, next_rep + need))
        next_rep += need
        with threadpool_limits(1):
            if n_jobs == 1:
                recs = [_replicate(scenario, r, options) for r in reps]
            else:
                recs = Parallel(n_jobs=n_jobs)(delayed(_replicate)(scenario, r, options)
                                               for r in reps)
        for r in recs:
            (redrawn if r["warnings"] else clean).append(r)
        attempted = len(clean) + len(redrawn)
        if attempted >= 10 and len(redrawn) > 0.9 * attempted:
            raise StudyAborted(f"{len(redrawn)} of {attempted} replicates raised warnings")
        if attempted >= limit:
            raise StudyAborted(f"only {len(clean)} clean replicates after {attempted} attempts")
        log.info("scenario %d: %d clean, %d redrawn", scenario.id, len(clean), len(redrawn))
    return summarize(scenario, clean, redrawn)


def summarize(scenario: Scenario, clean: list, redrawn: list) -> dict:
    truth = scenario.truth.linear_coefficients()
    coef = {k: [r["coefficients"][k] for r in clean] for k in truth}
    summary = {k: {"truth": truth[k], "median": float(np.median(v)),
                   "q25": float(np.quantile(v, 0.25)), "q75": float(np.quantile(v, 0.75)),
                   "median_abs_error": float(np.median(np.abs(np.asarray(v) - truth[k])))}
               for k, v in coef.items()}
    keys = sorted({k for r in clean for k in r["smooth_rmse"]})
    rmse = {k: float(np.mean([r["smooth_rmse"][k] for r in clean])) for k in keys}
    share = float(np.mean([r["aic"] < r["aic_independence"] for r in clean])) if clean else math.nan
    return {"scenario": scenario.id, "margin": scenario.margin, "copula": scenario.copula,
            "n": scenario.n, "n_rep": len(clean), "seed": scenario.seed,
            "redrawn": len(redrawn), "aic_share": share, "coefficients": summary,
            "smooth_rmse": rmse, "records": clean,
            "redrawn_records": [{"rep": r["rep"], "warnings": r["warnings"]} for r in redrawn]}


def thread_count(cli_value=None) -> int:
    if cli_value is not None:
        return max(1, int(cli_value))
    env = os.environ.get("ORDCOP_THREADS")
    return max(1, int(env)) if env else 1


def empirical_tau(u, v) -> float:
    return float(stats.kendalltau(u, v).statistic)
