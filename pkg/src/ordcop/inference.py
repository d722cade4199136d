"""Post-fit inference: intervals, predictions, joint probabilities, residuals."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import special

from . import copulas
from .copulas import EPS, copula_cdf, gamma_unlink, kendall_tau
from .estimator import FitResult
from .margins import ContinuousMargin, OrdinalMargin, category_probabilities, expand_cutpoints


class DegenerateCovariance(RuntimeWarning):
    pass


# ---------------------------------------------------------------------------
# posterior simulation

def posterior_draws(fit: FitResult, n_sim: int = 100, seed=0) -> np.ndarray:
    """Draws from N(beta_hat, V_bayes), shape (n_sim, p)."""
    if n_sim < 2:
        raise ValueError("n_sim must be at least 2")
    V = 0.5 * (fit.V_bayes + fit.V_bayes.T)
    w, Q = np.linalg.eigh(V)
    w = np.clip(w, 0.0, None)
    if not np.any(w > 0):
        warnings.warn("covariance matrix is zero; draws collapse to the estimate",
                      DegenerateCovariance, stacklevel=2)
    L = Q * np.sqrt(w)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_sim, fit.beta.size))
    return fit.beta + z @ L.T


def ci_functional(fit: FitResult, functional, n_sim: int = 100, level: float = 0.95,
                  seed=0, draws=None):
    """Posterior-simulation interval of ``functional(beta)``.

    Parameters
    ----------
    functional : callable
        Maps a coefficient vector to a scalar or an array.
    n_sim : int
        Number of draws (default 100).
    level : float
        Coverage; quantiles ``(1 - level)/2`` and ``(1 + level)/2`` are used.
    draws : ndarray, optional
        Reuse existing draws.

    Returns
    -------
    (lower, upper) : floats or arrays
        Empirical quantiles with the inverted-CDF rule, which makes the
        interval equivariant under monotone transformations of the functional.
    """
    if draws is None:
        draws = posterior_draws(fit, n_sim, seed)
    vals = np.array([np.asarray(functional(b), dtype=float) for b in draws])
    zeta = 1 - level
    lo = np.quantile(vals, zeta / 2, axis=0, method="inverted_cdf")
    hi = np.quantile(vals, 1 - zeta / 2, axis=0, method="inverted_cdf")
    if np.ndim(lo) == 0:
        return float(lo), float(hi)
    return lo, hi


def coefficient_intervals(fit: FitResult, n_sim: int = 100, level: float = 0.95, seed=0):
    lo, hi = ci_functional(fit, lambda b: b, n_sim, level, seed)
    return pd.DataFrame({"name": fit.coef_names, "estimate": fit.beta, "se": fit.se,
                         "lower": lo, "upper": hi})


# ---------------------------------------------------------------------------
# predictions

def _design_rows(fit: FitResult, newdata):
    if newdata is None:
        return {p: fit.design.X(p) for p in fit.design.params}, fit.design.n
    X = fit.design.new_design(newdata)
    n = next(iter(X.values())).shape[0]
    return X, n


def predictors(fit: FitResult, newdata=None, beta=None) -> dict:
    """Linear predictors of every parameter (training rows when ``newdata`` is None)."""
    beta = fit.beta if beta is None else np.asarray(beta)
    X, n = _design_rows(fit, newdata)
    return {p: (X[p] @ beta[fit.design.slices[p]] if X[p].shape[1] else np.zeros(n))
            for p in ("mu1", "mu2", "sigma2", "gamma")}


def _gamma_of(fit, eta_gamma):
    if fit.spec.copula is None:
        return None
    return np.atleast_1d(gamma_unlink(fit.spec.copula, eta_gamma))


def tau_of(fit: FitResult, eta_gamma):
    if fit.spec.copula is None:
        return np.zeros(np.size(eta_gamma))
    return np.atleast_1d(kendall_tau(fit.spec.copula, _gamma_of(fit, eta_gamma)))


def predict(fit: FitResult, newdata=None, beta=None) -> pd.DataFrame:
    """Per-row predictions.

    Columns: ``eta_mu1``, ``p1..pK`` (category probabilities), ``mu2`` and
    ``sigma2`` on the natural scale, ``eta_mu2``, ``eta_sigma2``, and for
    copula models ``eta_gamma``, ``gamma`` and ``tau``.

    Raises
    ------
    UnknownLevel
        If ``newdata`` contains factor levels or clusters not seen in fitting.
    """
    beta = fit.beta if beta is None else np.asarray(beta)
    eta = predictors(fit, newdata, beta)
    K = fit.design.n_categories
    cuts = expand_cutpoints(beta[:K - 1])
    probs = category_probabilities(OrdinalMargin(fit.spec.link, K), cuts, eta["mu1"])
    mu, sig = ContinuousMargin(fit.spec.margin).params(eta["mu2"], eta["sigma2"])
    out = {"eta_mu1": eta["mu1"]}
    for r in range(K):
        out[f"p{r + 1}"] = probs[:, r]
    out.update({"eta_mu2": eta["mu2"], "eta_sigma2": eta["sigma2"],
                "mu2": np.broadcast_to(mu, eta["mu2"].shape), "sigma2": sig})
    if fit.spec.copula is not None:
        out["eta_gamma"] = eta["gamma"]
        out["gamma"] = _gamma_of(fit, eta["gamma"])
        out["tau"] = tau_of(fit, eta["gamma"])
    return pd.DataFrame(out)


def group_tau(fit: FitResult, data, by: str) -> pd.DataFrame:
    """Average per-observation Kendall's tau within groups of ``by``."""
    pred = predict(fit, data)
    frame = pd.DataFrame({by: np.asarray(data[by]), "tau": pred["tau"].to_numpy()})
    return frame.groupby(by, sort=True)["tau"].agg(["mean", "min", "max", "count"]).reset_index()


def _margin_cdfs(fit, eta, r, y2, beta):
    K = fit.design.n_categories
    cuts = expand_cutpoints(beta[:K - 1])
    om = OrdinalMargin(fit.spec.link, K)
    r = np.broadcast_to(np.asarray(r, dtype=int), eta["mu1"].shape)
    if np.any(r < 0) or np.any(r > K):
        raise ValueError(f"category must lie in 0..{K}")
    th = cuts.padded()
    F1 = np.where(r >= K, 1.0, np.where(r <= 0, 0.0, om.cdf(th[np.clip(r, 0, K)] - eta["mu1"])))
    y2 = np.broadcast_to(np.asarray(y2, dtype=float), eta["mu2"].shape)
    cm = ContinuousMargin(fit.spec.margin)
    with np.errstate(divide="ignore", invalid="ignore"):
        F2 = np.where(np.isposinf(y2), 1.0, cm.cdf(np.where(np.isfinite(y2), y2, 1.0),
                                                   eta["mu2"], eta["sigma2"]))
    F2 = np.where(np.isneginf(y2), 0.0, F2)
    if cm.family.value != "normal":
        F2 = np.where(y2 <= 0, 0.0, F2)
    return F1, F2


def joint_probability(fit: FitResult, newdata=None, r=1, y2=np.inf, beta=None):
    """P(Y1 <= r, Y2 <= y2) = C(F1(r), F2(y2)) per row."""
    beta = fit.beta if beta is None else np.asarray(beta)
    eta = predictors(fit, newdata, beta)
    F1, F2 = _margin_cdfs(fit, eta, r, y2, beta)
    if fit.spec.copula is None:
        return F1 * F2
    return np.atleast_1d(copula_cdf(fit.spec.copula, F1, F2, _gamma_of(fit, eta["gamma"])))


def relative_risk(fit: FitResult, rows, baseline, r, y2):
    """Joint probabilities of ``rows`` divided by that of the single ``baseline`` row."""
    p = joint_probability(fit, rows, r, y2)
    p0 = joint_probability(fit, baseline, r, y2)
    if np.size(p0) != 1:
        raise ValueError("baseline must contain exactly one row")
    return p / p0[0]


def poverty_line(y2, fraction: float = 0.6) -> float:
    """Relative poverty line: ``fraction`` times the median of the unique values."""
    return fraction * float(np.median(np.unique(np.asarray(y2, dtype=float))))


@dataclass
class Classification:
    flags: np.ndarray
    probability: np.ndarray
    actual: np.ndarray
    tpr: float
    ppv: float
    income_line: float
    educ_threshold: int

    def as_dict(self):
        return {"tpr": self.tpr, "ppv": self.ppv, "n_flagged": int(self.flags.sum()),
                "n_actual": int(self.actual.sum()), "income_line": self.income_line,
                "educ_threshold": self.educ_threshold}


def classify_vulnerable(fit: FitResult, data, educ_threshold: int, income_line=None,
                        prob_threshold: float = 0.1, dimension: str = "both") -> Classification:
    """Flag rows whose modelled poverty probability reaches ``prob_threshold``.

    Poverty means ``y1 <= educ_threshold`` (education) and/or
    ``y2 <= income_line`` (income; default 60% of the median of unique
    values).  ``dimension`` selects ``"both"``, ``"income"`` or
    ``"education"``.

    Returns
    -------
    Classification
        ``tpr`` is the true-positive rate among the actually poor rows;
        ``ppv`` is the share of flagged rows that are actually poor, NaN (with
        a warning) when nothing is flagged.
    """
    y1 = np.asarray(data[fit.spec.response1]).astype(int)
    y2 = np.asarray(data[fit.spec.response2], dtype=float)
    line = poverty_line(y2) if income_line is None else float(income_line)
    K = fit.design.n_categories
    if dimension == "both":
        prob = joint_probability(fit, data, educ_threshold, line)
        actual = (y1 <= educ_threshold) & (y2 <= line)
    elif dimension == "income":
        prob = joint_probability(fit, data, K, line)
        actual = y2 <= line
    elif dimension == "education":
        prob = joint_probability(fit, data, educ_threshold, np.inf)
        actual = y1 <= educ_threshold
    else:
        raise ValueError("dimension must be 'both', 'income' or 'education'")
    flags = prob >= prob_threshold
    tp = int(np.sum(flags & actual))
    if actual.sum() == 0:
        warnings.warn("no row is actually poor; true-positive rate undefined", RuntimeWarning,
                      stacklevel=2)
        tpr = float("nan")
    else:
        tpr = tp / int(actual.sum())
    if flags.sum() == 0:
        warnings.warn("no row flagged as vulnerable; share of flagged rows that are poor "
                      "is undefined", RuntimeWarning, stacklevel=2)
        ppv = float("nan")
    else:
        ppv = tp / int(flags.sum())
    return Classification(flags, prob, actual, tpr, ppv, line, educ_threshold)


def contour_grid(fit: FitResult, row, y2_grid) -> pd.DataFrame:
    """Joint density f(r, y2) and distribution P(Y1 <= r, Y2 <= y2) on a grid
    for one covariate row (all categories r)."""
    y2_grid = np.asarray(y2_grid, dtype=float)
    eta1 = predictors(fit, row)
    if eta1["mu1"].size != 1:
        raise ValueError("row must contain exactly one observation")
    K = fit.design.n_categories
    cm = ContinuousMargin(fit.spec.margin)
    recs = []
    m = y2_grid.size
    eta = {k: np.repeat(v, m) for k, v in eta1.items()}
    F2 = cm.cdf(y2_grid, eta["mu2"], eta["sigma2"])
    f2 = cm.pdf(y2_grid, eta["mu2"], eta["sigma2"])
    v = np.clip(F2, EPS, 1 - EPS)
    prev_h = np.zeros(m)
    for r in range(1, K + 1):
        F1, _ = _margin_cdfs(fit, eta, r, y2_grid, fit.beta)
        if fit.spec.copula is None:
            h = F1
            cdf = F1 * F2
        else:
            g = _gamma_of(fit, eta["gamma"])
            h = np.ones(m) if r == K else copulas.copula_derivatives(
                fit.spec.copula, F1, v, g, with_value=False).dC_dv
            cdf = copula_cdf(fit.spec.copula, F1, F2, g)
        dens = (h - prev_h) * f2
        prev_h = h
        for j in range(m):
            recs.append((r, y2_grid[j], dens[j], cdf[j]))
    return pd.DataFrame(recs, columns=["category", "y2", "density", "cdf"])


# ---------------------------------------------------------------------------
# residuals

@dataclass
class ResidualSet:
    q1: np.ndarray
    q2: np.ndarray
    q2_given_1: np.ndarray
    chi2: np.ndarray
    seed: object

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({"q1": self.q1, "q2": self.q2, "q2_given_1": self.q2_given_1,
                             "chi2": self.chi2})


def _probit(p):
    return special.ndtri(np.clip(p, EPS, 1 - EPS))


def residuals(fit: FitResult, data=None, seed=0) -> ResidualSet:
    """Quantile residuals.

    ``q2`` are normalized residuals of the continuous margin, ``q1``
    randomized residuals of the ordinal margin, ``q2_given_1`` residuals of the
    continuous response given the observed category, and ``chi2`` the sum of
    squares of ``q1`` and ``q2_given_1``.
    """
    if data is None:
        y1, y2 = fit.design.y1, fit.design.y2
    else:
        y1 = np.asarray(data[fit.spec.response1]).astype(int)
        y2 = np.asarray(data[fit.spec.response2], dtype=float)
    eta = predictors(fit, data)
    F_hi, F2 = _margin_cdfs(fit, eta, y1, y2, fit.beta)
    F_lo, _ = _margin_cdfs(fit, eta, y1 - 1, y2, fit.beta)
    rng = np.random.default_rng(seed)
    w = rng.uniform(size=y1.size)
    q1 = _probit(F_lo + w * (F_hi - F_lo))
    q2 = _probit(F2)
    if fit.spec.copula is None:
        cond = F2
    else:
        g = _gamma_of(fit, eta["gamma"])
        c_hi = copula_cdf(fit.spec.copula, F_hi, F2, g)
        c_lo = copula_cdf(fit.spec.copula, F_lo, F2, g)
        cond = (c_hi - c_lo) / np.maximum(F_hi - F_lo, 1e-300)
    q21 = _probit(cond)
    return ResidualSet(q1, q2, q21, q1 ** 2 + q21 ** 2, seed)


def reference_bands(n: int, n_rep: int = 100, level: float = 0.95, seed=0,
                    distribution: str = "chi2") -> pd.DataFrame:
    """Pointwise bands for sorted residuals from ``n_rep`` simulated samples.

    ``distribution`` is ``"chi2"`` (two degrees of freedom) or ``"normal"``.
    """
    rng = np.random.default_rng(seed)
    if distribution == "chi2":
        sims = rng.chisquare(2, size=(n_rep, n))
        theo = -2 * np.log1p(-(np.arange(1, n + 1) - 0.5) / n)
    elif distribution == "normal":
        sims = rng.standard_normal((n_rep, n))
        theo = special.ndtri((np.arange(1, n + 1) - 0.5) / n)
    else:
        raise ValueError("distribution must be 'chi2' or 'normal'")
    sims.sort(axis=1)
    a = (1 - level) / 2
    return pd.DataFrame({"theoretical": theo,
                         "lower": np.quantile(sims, a, axis=0),
                         "upper": np.quantile(sims, 1 - a, axis=0)})


def simulate_from_fit(fit: FitResult, data=None, seed=0):
    """Draw new responses from the fitted model at the covariates of ``data``.

    Returns
    -------
    (y1, y2) : tuple of ndarray
    """
    from .simstudy import sample_responses

    eta = predictors(fit, data)
    K = fit.design.n_categories
    cuts = expand_cutpoints(fit.beta[:K - 1]).theta
    rng = np.random.default_rng(seed)
    y1, y2, _, _ = sample_responses(fit.spec.copula, fit.spec.link, fit.spec.margin,
                                    cuts, eta, rng)
    return y1, y2
