"""Marginal distributions.

The ordinal response is modelled through a latent variable with logistic or
standard normal errors and monotone cut points; the continuous response has a
log-normal, normal or gamma distribution whose location and scale each carry
an additive predictor.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import special

from .copulas import EPS


class SupportViolation(ValueError):
    """A continuous response lies outside the support of its margin."""


class EmptyCategory(ValueError):
    """An ordinal level between the lowest and highest has no observations."""


# ---------------------------------------------------------------------------
# cut points

@dataclass(frozen=True)
class CutPoints:
    """Working and natural cut points.

    Attributes
    ----------
    theta_star : ndarray, shape (R,)
    theta : ndarray, shape (R,)
        Nondecreasing thresholds; ``theta_0 = -inf`` and ``theta_{R+1} = inf``
        are implicit.
    jacobian : ndarray, shape (R, R)
        ``jacobian[r, h] = d theta_r / d theta_star_h``.
    """

    theta_star: np.ndarray
    theta: np.ndarray
    jacobian: np.ndarray

    @property
    def n_categories(self) -> int:
        return len(self.theta) + 1

    def padded(self) -> np.ndarray:
        """Thresholds with the infinite sentinels, length R + 2."""
        return np.concatenate([[-np.inf], self.theta, [np.inf]])


def expand_cutpoints(theta_star) -> CutPoints:
    ts = np.atleast_1d(np.asarray(theta_star, dtype=float))
    if ts.ndim != 1 or ts.size < 1:
        raise ValueError("theta_star must be a nonempty vector")
    inc = ts ** 2
    inc[0] = ts[0]
    theta = np.cumsum(inc)
    R = ts.size
    d = 2 * ts
    d[0] = 1.0
    jac = np.tril(np.broadcast_to(d, (R, R)))
    return CutPoints(ts.copy(), theta, jac)


def collapse_cutpoints(theta) -> np.ndarray:
    """Working parameters of nondecreasing cut points (positive square roots)."""
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    diffs = np.diff(th)
    if np.any(diffs < 0):
        raise ValueError("cut points must be nondecreasing")
    return np.concatenate([th[:1], np.sqrt(diffs)])


# ---------------------------------------------------------------------------
# ordinal margin

class Link(str, enum.Enum):
    LOGIT = "logit"
    PROBIT = "probit"


@dataclass(frozen=True)
class OrdinalMargin:
    link: Link = Link.PROBIT
    n_categories: int = 2

    def __post_init__(self):
        object.__setattr__(self, "link", Link(self.link))
        if self.n_categories < 2:
            raise ValueError("an ordinal margin needs at least two categories")

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.link is Link.PROBIT:
            return special.ndtr(x)
        return special.expit(x)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.link is Link.PROBIT:
            return np.exp(-0.5 * x * x) / np.sqrt(2 * np.pi)
        p = special.expit(x)
        return p * (1 - p)

    def pdf_deriv(self, x):
        """Derivative of the latent density."""
        x = np.asarray(x, dtype=float)
        if self.link is Link.PROBIT:
            return np.where(np.isfinite(x), -x * self.pdf(np.where(np.isfinite(x), x, 0.0)), 0.0)
        p = special.expit(x)
        return p * (1 - p) * (1 - 2 * p)

    def ppf(self, p):
        p = np.asarray(p, dtype=float)
        if self.link is Link.PROBIT:
            return special.ndtri(p)
        return special.logit(p)


def ordinal_cdf(margin: OrdinalMargin, cuts: CutPoints, eta_mu1, r):
    """P(Y1 <= r) = F(theta_r - eta) with sentinels at r = 0 and r = R + 1."""
    th = cuts.padded()
    r = np.asarray(r)
    if np.any(r < 0) or np.any(r > cuts.n_categories):
        raise ValueError("category index out of range")
    out = margin.cdf(th[r] - np.asarray(eta_mu1, dtype=float))
    out = np.where(r == 0, 0.0, np.where(r == cuts.n_categories, 1.0, out))
    return out if np.ndim(out) else float(out)


def category_probabilities(margin: OrdinalMargin, cuts: CutPoints, eta_mu1):
    """Matrix of P(Y1 = r), rows = observations, columns r = 1..R+1."""
    eta = np.atleast_1d(np.asarray(eta_mu1, dtype=float))
    F = margin.cdf(cuts.padded()[None, :] - eta[:, None])
    F[:, 0] = 0.0
    F[:, -1] = 1.0
    return np.diff(F, axis=1)


def check_categories(y1, n_categories: int | None = None) -> int:
    """Validate an ordinal response coded 1..K and return K.

    Raises :class:`EmptyCategory` when some level in ``1..K`` is unobserved.
    """
    y = np.asarray(y1)
    if y.size == 0:
        raise EmptyCategory("no observations")
    if not np.all(np.equal(np.mod(y, 1), 0)):
        raise ValueError("ordinal response must be integer coded")
    y = y.astype(int)
    if y.min() < 1:
        raise ValueError("ordinal response must be coded 1..K")
    K = int(y.max()) if n_categories is None else int(n_categories)
    counts = np.bincount(y, minlength=K + 1)[1:K + 1]
    empty = np.flatnonzero(counts == 0) + 1
    if empty.size:
        raise EmptyCategory(f"ordinal level(s) {empty.tolist()} have no observations")
    if K < 2:
        raise EmptyCategory("ordinal response has a single observed level")
    return K


# ---------------------------------------------------------------------------
# continuous margins

class ContinuousFamily(str, enum.Enum):
    LOGNORMAL = "lognormal"
    NORMAL = "normal"
    GAMMA = "gamma"


@dataclass
class ContinuousBundle:
    """Value and derivatives of a continuous margin with respect to its two
    predictors (index 0 = location, 1 = scale).

    ``dF`` and ``dlogf`` have shape (2, n); second derivatives have shape
    (3, n) ordered (00, 01, 11). The derivative fields are ``None`` for a
    value-only gamma bundle.
    """

    F: np.ndarray
    f: np.ndarray
    logf: np.ndarray
    dF: np.ndarray
    d2F: np.ndarray
    dlogf: np.ndarray
    d2logf: np.ndarray

    @property
    def df(self):
        return self.f * self.dlogf

    @property
    def d2f(self):
        a, b = self.dlogf
        l00, l01, l11 = self.d2logf
        return self.f * np.stack([l00 + a * a, l01 + a * b, l11 + b * b])


@dataclass(frozen=True)
class ContinuousMargin:
    """Continuous margin.

    Parameterisation (location predictor ``eta_mu``, scale predictor ``eta_sigma``):

    * ``lognormal``: log y ~ N(eta_mu, exp(eta_sigma)^2)
    * ``normal``: y ~ N(eta_mu, exp(eta_sigma)^2)
    * ``gamma``: mean exp(eta_mu), coefficient of variation sigma = exp(eta_sigma);
      shape ``1/sigma^2`` and scale ``mean * sigma^2``.
    """

    family: ContinuousFamily = ContinuousFamily.LOGNORMAL

    def __post_init__(self):
        object.__setattr__(self, "family", ContinuousFamily(self.family))

    def check_support(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise SupportViolation("continuous response contains non-finite values")
        if self.family is not ContinuousFamily.NORMAL and np.any(y <= 0):
            bad = np.flatnonzero(y <= 0)
            raise SupportViolation(
                f"{self.family.value} margin needs y > 0; offending rows {bad[:10].tolist()}")

    def params(self, eta_mu, eta_sigma):
        """Natural parameters (mu, sigma) on the response scale."""
        eta_mu = np.asarray(eta_mu, dtype=float)
        sigma = np.exp(np.asarray(eta_sigma, dtype=float))
        if self.family is ContinuousFamily.GAMMA:
            return np.exp(eta_mu), sigma
        return eta_mu, sigma

    def mean(self, eta_mu, eta_sigma):
        mu, sigma = self.params(eta_mu, eta_sigma)
        if self.family is ContinuousFamily.LOGNORMAL:
            return np.exp(mu + sigma ** 2 / 2)
        return mu

    def cdf(self, y, eta_mu, eta_sigma):
        y = np.asarray(y, dtype=float)
        mu, sigma = self.params(eta_mu, eta_sigma)
        if self.family is ContinuousFamily.GAMMA:
            k = 1 / sigma ** 2
            return special.gammainc(k, y / (mu / k))
        z = ((np.log(y) if self.family is ContinuousFamily.LOGNORMAL else y) - mu) / sigma
        return special.ndtr(z)

    def ppf(self, p, eta_mu, eta_sigma):
        p = np.asarray(p, dtype=float)
        mu, sigma = self.params(eta_mu, eta_sigma)
        if self.family is ContinuousFamily.GAMMA:
            k = 1 / sigma ** 2
            return special.gammaincinv(k, p) * (mu / k)
        x = mu + sigma * special.ndtri(p)
        return np.exp(x) if self.family is ContinuousFamily.LOGNORMAL else x

    def logpdf(self, y, eta_mu, eta_sigma):
        y = np.asarray(y, dtype=float)
        mu, sigma = self.params(eta_mu, eta_sigma)
        if self.family is ContinuousFamily.GAMMA:
            k = 1 / sigma ** 2
            return (k * np.log(k / mu) + (k - 1) * np.log(y) - k * y / mu
                    - special.gammaln(k))
        x = np.log(y) if self.family is ContinuousFamily.LOGNORMAL else y
        z = (x - mu) / sigma
        out = -0.5 * z * z - np.log(sigma) - 0.5 * np.log(2 * np.pi)
        if self.family is ContinuousFamily.LOGNORMAL:
            out = out - x
        return out

    def pdf(self, y, eta_mu, eta_sigma):
        return np.exp(self.logpdf(y, eta_mu, eta_sigma))


def continuous_bundle(margin: ContinuousMargin, y, eta_mu2, eta_sigma2, *,
                      derivatives: bool = True) -> ContinuousBundle:
    """CDF, density and their derivatives with respect to both predictors.

    With ``derivatives=False`` only ``F``, ``f`` and ``logf`` are filled in
    for the gamma margin, whose shape derivatives are the expensive part.

    Raises
    ------
    SupportViolation
        If any ``y`` lies outside the support of the margin.
    """
    margin.check_support(y)
    y, em, es = np.broadcast_arrays(*(np.asarray(t, dtype=float)
                                      for t in (y, eta_mu2, eta_sigma2)))
    if margin.family is ContinuousFamily.GAMMA:
        return _gamma_bundle(y, em, es, derivatives)
    sigma = np.exp(es)
    x = np.log(y) if margin.family is ContinuousFamily.LOGNORMAL else y
    z = (x - em) / sigma
    phi = np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)
    F = special.ndtr(z)
    logf = -0.5 * z * z - es - 0.5 * np.log(2 * np.pi)
    if margin.family is ContinuousFamily.LOGNORMAL:
        logf = logf - x
    # derivatives of z w.r.t. (eta_mu, eta_sigma)
    z_m = -1 / sigma
    z_s = -z
    z_mm = np.zeros_like(z)
    z_ms = 1 / sigma
    z_ss = z
    dF = np.stack([phi * z_m, phi * z_s])
    d2F = np.stack([phi * (z_mm - z * z_m * z_m),
                    phi * (z_ms - z * z_m * z_s),
                    phi * (z_ss - z * z_s * z_s)])
    dlogf = np.stack([z / sigma, -1 + z * z])
    d2logf = np.stack([-1 / sigma ** 2 * np.ones_like(z), -2 * z / sigma, -2 * z * z])
    return ContinuousBundle(F, np.exp(logf), logf, dF, d2F, dlogf, d2logf)


def _lower_gamma_k_derivs(k, x):
    """First and second derivatives of the regularised lower incomplete gamma
    P(k, x) with respect to the shape ``k``.

    Uses the series P(k, x) = sum_n exp((k+n) log x - x - lgamma(k+n+1)),
    summed over a window around its largest term.
    """
    k = np.asarray(k, dtype=float)
    x = np.asarray(x, dtype=float)
    peak = np.maximum(np.floor(x - k), 0.0)
    width = np.ceil(12 * np.sqrt(np.maximum(np.maximum(x, k), 1.0)) + 40)
    start = np.maximum(peak - width, 0.0)
    n_terms = int(np.max(2 * width + 1)) if k.size else 1
    d1 = np.zeros(np.broadcast_shapes(k.shape, x.shape))
    d2 = np.zeros_like(d1)
    logx = np.log(x)
    # successive terms by recursion: term(a + 1) = term(a) x / a, with the
    # digamma and trigamma recurrences alongside
    a = k + start + 1
    term = np.exp((a - 1) * logx - x - special.gammaln(a))
    dl = logx - special.digamma(a)
    tri = special.polygamma(1, a)
    for _ in range(n_terms):
        d1 = d1 + term * dl
        d2 = d2 + term * (dl * dl - tri)
        term = term * x / a
        dl = dl - 1 / a
        tri = tri - 1 / a ** 2
        a = a + 1
    return d1, d2


def _gamma_bundle(y, eta_mu, eta_sigma, derivatives=True) -> ContinuousBundle:
    mu = np.exp(eta_mu)
    sigma = np.exp(eta_sigma)
    k = 1 / sigma ** 2
    x = y * k / mu
    F = special.gammainc(k, x)
    logf = k * np.log(k / mu) + (k - 1) * np.log(y) - k * y / mu - special.gammaln(k)
    if not derivatives:
        return ContinuousBundle(F, np.exp(logf), logf, None, None, None, None)
    # partials of P(k, x) in (k, x)
    logp = (k - 1) * np.log(x) - x - special.gammaln(k)
    p = np.exp(logp)  # dP/dx
    P_x = p
    P_xx = p * ((k - 1) / x - 1)
    P_kx = p * (np.log(x) - special.digamma(k))
    P_k, P_kk = _lower_gamma_k_derivs(k, x)
    # chain rule: k(eta_sigma) = exp(-2 eta_sigma), x(eta_mu, eta_sigma) = y k / mu
    k_s, k_ss = -2 * k, 4 * k
    x_m, x_s = -x, -2 * x
    x_mm, x_ms, x_ss = x, 2 * x, 4 * x
    # when k varies the series derivatives above already hold x fixed
    dF_m = P_x * x_m
    dF_s = P_x * x_s + P_k * k_s
    d2F_mm = P_xx * x_m * x_m + P_x * x_mm
    d2F_ms = P_xx * x_m * x_s + P_kx * x_m * k_s + P_x * x_ms
    d2F_ss = (P_xx * x_s * x_s + 2 * P_kx * x_s * k_s + P_kk * k_s * k_s
              + P_x * x_ss + P_k * k_ss)
    # log-density derivatives
    r = y / mu
    l_m = k * (r - 1)
    l_mm = -k * r
    l_k = np.log(k) + 1 - np.log(mu) + np.log(y) - r - special.digamma(k)
    l_kk = 1 / k - special.polygamma(1, k)
    l_s = l_k * k_s
    l_ss = l_kk * k_s * k_s + l_k * k_ss
    l_ms = (r - 1) * k_s
    dF = np.stack([dF_m, dF_s])
    d2F = np.stack([d2F_mm, d2F_ms, d2F_ss])
    dlogf = np.stack([l_m, l_s])
    d2logf = np.stack([l_mm, l_ms, l_ss])
    return ContinuousBundle(F, np.exp(logf), logf, dF, d2F, dlogf, d2logf)


def clamp_probability(p):
    return np.clip(p, EPS, 1 - EPS)
