import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from ordcop.margins import (ContinuousMargin, EmptyCategory, OrdinalMargin, SupportViolation,
                            category_probabilities, check_categories, collapse_cutpoints,
                            continuous_bundle, expand_cutpoints, ordinal_cdf)


def test_cutpoint_expansion():
    cuts = expand_cutpoints([0.5, 1.0, 2.0])
    assert_allclose(cuts.theta, [0.5, 1.5, 5.5])
    assert_allclose(expand_cutpoints([0.7]).theta, [0.7])
    assert_allclose(collapse_cutpoints(cuts.theta) ** 2, np.array([0.5, 1.0, 2.0]) ** 2)


def test_cutpoint_jacobian():
    ts = np.array([-0.4, 0.8, -1.3, 0.2])
    J = expand_cutpoints(ts).jacobian
    h = 1e-7
    fd = np.column_stack([(expand_cutpoints(ts + h * e).theta - expand_cutpoints(ts - h * e).theta)
                          / (2 * h) for e in np.eye(4)])
    assert_allclose(J, fd, atol=1e-8)


def test_cutpoints_are_ordered():
    rng = np.random.default_rng(0)
    for _ in range(20):
        th = expand_cutpoints(rng.normal(size=5)).theta
        assert np.all(np.diff(th) >= 0)


def test_ordinal_cdf_values():
    probit = OrdinalMargin("probit", 4)
    cuts = expand_cutpoints(collapse_cutpoints([-1.0, 0.0, 1.0]))
    assert_allclose(ordinal_cdf(probit, cuts, 0.0, 2), 0.5, atol=1e-15)
    assert ordinal_cdf(probit, cuts, 3.7, 4) == 1.0
    assert ordinal_cdf(probit, cuts, 3.7, 0) == 0.0
    logit = OrdinalMargin("logit", 2)
    assert_allclose(ordinal_cdf(logit, expand_cutpoints([0.0]), 0.0, 1), 0.5)


def test_category_probabilities_sum_to_one():
    m = OrdinalMargin("logit", 5)
    cuts = expand_cutpoints([-1.0, 0.7, 0.5, 1.1])
    P = category_probabilities(m, cuts, np.linspace(-3, 3, 11))
    assert P.shape == (11, 5)
    assert np.all(P >= 0)
    assert_allclose(P.sum(axis=1), 1.0, atol=1e-14)


def test_link_pdf_derivative():
    for link in ("probit", "logit"):
        m = OrdinalMargin(link, 3)
        x = np.linspace(-4, 4, 9)
        h = 1e-6
        assert_allclose(m.pdf(x), (m.cdf(x + h) - m.cdf(x - h)) / (2 * h), atol=1e-9)
        assert_allclose(m.pdf_deriv(x), (m.pdf(x + h) - m.pdf(x - h)) / (2 * h), atol=1e-9)
        assert_allclose(m.cdf(m.ppf(np.array([0.1, 0.5, 0.9]))), [0.1, 0.5, 0.9])


def test_check_categories():
    assert check_categories([1, 2, 3, 3]) == 3
    with pytest.raises(EmptyCategory, match=r"\[2\]"):
        check_categories([1, 3, 3])
    with pytest.raises(EmptyCategory):
        check_categories([1, 1, 2], n_categories=3)
    with pytest.raises(ValueError):
        check_categories([0, 1, 2])


def test_lognormal_median():
    m = ContinuousMargin("lognormal")
    assert_allclose(m.cdf(1.0, 0.0, 0.0), 0.5)
    assert_allclose(m.pdf(1.0, 0.0, 0.0), 0.3989422804014327)
    assert_allclose(ContinuousMargin("normal").cdf(2.3, 2.3, 0.7), 0.5)


def test_against_scipy():
    y = np.array([0.2, 1.0, 3.5])
    g = ContinuousMargin("gamma")
    mean, sigma = np.exp(0.3), np.exp(-0.2)
    k = 1 / sigma ** 2
    assert_allclose(g.cdf(y, 0.3, -0.2), stats.gamma.cdf(y, k, scale=mean / k))
    assert_allclose(g.logpdf(y, 0.3, -0.2), stats.gamma.logpdf(y, k, scale=mean / k))
    ln = ContinuousMargin("lognormal")
    assert_allclose(ln.logpdf(y, 0.3, -0.2), stats.lognorm.logpdf(y, np.exp(-0.2),
                                                                   scale=np.exp(0.3)))
    for m in (g, ln, ContinuousMargin("normal")):
        assert_allclose(m.cdf(m.ppf(np.array([0.05, 0.5, 0.95]), 0.3, -0.2), 0.3, -0.2),
                        [0.05, 0.5, 0.95], rtol=1e-10)


@pytest.mark.parametrize("family,y,em,es", [
    ("gamma", 2.0, 0.3, -0.2),
    ("gamma", 0.05, -1.0, 0.8),
    ("gamma", 4.0, 0.1, -1.5),
    ("lognormal", 0.7, -0.2, 0.3),
    ("normal", -1.2, 0.4, -0.5),
])
def test_bundle_against_finite_differences(family, y, em, es):
    m = ContinuousMargin(family)
    h = 1e-6

    def at(a, b):
        return continuous_bundle(m, np.array([y]), np.array([a]), np.array([b]))

    b0 = at(em, es)
    assert_allclose(b0.F, m.cdf(y, em, es), rtol=1e-12)
    assert_allclose(b0.f, m.pdf(y, em, es), rtol=1e-12)
    up = [at(em + h, es), at(em, es + h)]
    dn = [at(em - h, es), at(em, es - h)]
    for k in range(2):
        dF = (up[k].F - dn[k].F) / (2 * h)
        dl = (up[k].logf - dn[k].logf) / (2 * h)
        assert_allclose(b0.dF[k], dF, rtol=1e-6, atol=1e-9)
        assert_allclose(b0.dlogf[k], dl, rtol=1e-6, atol=1e-9)
    # second derivatives from first derivatives
    pairs = {0: (0, 0), 1: (0, 1), 2: (1, 1)}
    for idx, (i, j) in pairs.items():
        d2F = (up[j].dF[i] - dn[j].dF[i]) / (2 * h)
        d2l = (up[j].dlogf[i] - dn[j].dlogf[i]) / (2 * h)
        assert_allclose(b0.d2F[idx], d2F, rtol=1e-6, atol=1e-8)
        assert_allclose(b0.d2logf[idx], d2l, rtol=1e-6, atol=1e-8)


def test_support_violation():
    with pytest.raises(SupportViolation, match="rows"):
        continuous_bundle(ContinuousMargin("lognormal"), np.array([1.0, -2.0]), 0.0, 0.0)
    continuous_bundle(ContinuousMargin("normal"), np.array([1.0, -2.0]), 0.0, 0.0)
