import warnings
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from ordcop import copulas
from ordcop.estimator import (FitOptions, TrustState, dependence_start, fit, fit_pair,
                              information_criteria, solve_trust_subproblem, trust_step)
from ordcop.model import ModelSpec, intercept, linear, spline
from ordcop.simstudy import Scenario, generate, study_spec


def quadratic(center, A):
    def objective(beta, order):
        d = beta - center
        val = -0.5 * d @ A @ d
        return val, -A @ d, -A
    return objective


def test_newton_step_inside_region():
    A = np.array([[2.0, 0.3], [0.3, 1.0]])
    c = np.array([0.4, -0.2])
    obj = quadratic(c, A)
    st = TrustState(np.zeros(2), 10.0)
    st.value = obj(st.beta, 0)[0]
    out = trust_step(st, obj)
    assert out.accepted
    assert_allclose(out.beta, c, atol=1e-14)


def test_subproblem_on_boundary_and_hard_case():
    g = np.array([1.0, 2.0])
    H = -np.eye(2)
    p, on = solve_trust_subproblem(g, H, 0.5)
    assert on
    assert_allclose(np.linalg.norm(p), 0.5)
    assert_allclose(p / np.linalg.norm(p), g / np.linalg.norm(g))
    # hard case: gradient orthogonal to the direction of positive curvature
    H = np.diag([1.0, -2.0])
    p, on = solve_trust_subproblem(np.array([0.0, 1.0]), H, 1.0)
    assert on
    assert_allclose(np.linalg.norm(p), 1.0)
    q = np.array([0.0, 1.0]) @ p + 0.5 * p @ H @ p
    assert q >= 0.5 * 1.0 - 1e-12  # at least as good as moving along the ascent axis


def test_infeasible_proposal_rejected():
    def objective(beta, order):
        if beta[0] > 0.5:
            return -np.inf, None, None
        return -(beta[0] - 2) ** 2, np.array([-2 * (beta[0] - 2)]), np.array([[-2.0]])
    st = TrustState(np.array([0.0]), 1.0, value=-4.0)
    out = trust_step(st, objective)
    assert not out.accepted
    assert out.radius == 0.5
    assert_allclose(out.beta, [0.0])


def test_rosenbrock_maximum():
    def objective(b, order):
        x, y = b
        val = -(100 * (y - x * x) ** 2 + (1 - x) ** 2)
        g = -np.array([-400 * x * (y - x * x) - 2 * (1 - x), 200 * (y - x * x)])
        H = -np.array([[1200 * x * x - 400 * y + 2, -400 * x], [-400 * x, 200.0]])
        return val, g, H
    st = TrustState(np.array([-1.2, 1.0]), 1.0)
    st.value = objective(st.beta, 0)[0]
    for it in range(50):
        _, g, H = objective(st.beta, 2)
        if np.max(np.abs(g)) < 1e-12:
            break
        st = trust_step(st, objective, (g, H))
    assert it < 50
    assert_allclose(st.beta, [1.0, 1.0], atol=1e-8)


def test_information_criteria_arithmetic():
    aic, bic = information_criteria(-100.0, 5.0, 100)
    assert_allclose(aic, 210.0)
    assert_allclose(bic, 223.02585092994046)


def test_dependence_start():
    rng = np.random.default_rng(0)
    y1 = rng.integers(1, 4, 3000)
    y2 = rng.normal(size=3000)
    assert abs(dependence_start("gaussian", y1, y2)) < 0.05
    y = np.arange(50)
    g = copulas.gamma_unlink("gaussian", dependence_start("gaussian", y // 10 + 1, y.astype(float)))
    assert -1 + copulas.EPS < g < 1 - copulas.EPS
    # negative dependence cannot be reached by Clayton: falls back to the default
    g = dependence_start("clayton", y // 10 + 1, -y.astype(float))
    assert np.isfinite(g)


@pytest.fixture(scope="module")
def scenario_fit():
    sc = Scenario(1)
    df = generate(sc, 0, n=1000)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        biv, ind = fit_pair(study_spec(sc), df)
    return biv, ind


def test_fit_converges_with_first_order_conditions(scenario_fit):
    biv, ind = scenario_fit
    assert biv.converged and ind.converged
    assert np.max(np.abs(biv.gradient_penalized)) < 1e-5 * (1 + abs(biv.loglik_penalized))
    assert np.all(np.linalg.eigvalsh(-biv.Hp) > 0)
    assert biv.aic < ind.aic
    assert_allclose(biv.bic - biv.aic, (np.log(biv.n) - 2) * biv.edf, rtol=1e-12)
    assert np.all(biv.se > 0)


def test_edf_collapses_to_null_space(scenario_fit):
    biv, _ = scenario_fit
    lam = biv.lam.copy()
    lam[0] = 1e12
    big = replace(biv, lam=lam)
    label = biv.design.penalty_labels()[0]
    blk = biv.design.penalties[0]
    # the centred spline keeps only the linear direction of the order-2 null space
    assert_allclose(big.term_edf()[label], blk.raw_null_dim - 1, atol=1e-3)
    assert biv.term_edf()[label] > blk.raw_null_dim - 1 + 0.5


def test_unpenalized_model():
    sc = Scenario(2)
    df = generate(sc, 0, n=400)
    spec = ModelSpec("y1", "y2", mu1=(linear("x1"),), mu2=(intercept(), linear("x1")),
                     sigma2=(intercept(),), gamma=(intercept(),), margin="gamma",
                     copula="gaussian")
    res = fit(spec, df)
    assert res.lam.size == 0
    assert res.converged
    assert len(res.trace) == 1


def test_determinism():
    sc = Scenario(3)
    df = generate(sc, 1, n=500)
    spec = ModelSpec("y1", "y2", mu1=(linear("x1"), spline("nu1", 8)),
                     mu2=(intercept(), linear("x1")), sigma2=(intercept(),),
                     gamma=(intercept(),), copula="joe180")
    a = fit(spec, df, FitOptions())
    b = fit(spec, df, FitOptions())
    assert np.array_equal(a.beta, b.beta)
    assert a.loglik == b.loglik


def test_stalled_radius_reported_as_nonconvergence(monkeypatch):
    from ordcop import estimator
    real = estimator.maximize_penalized

    def stall(beta, design, S, options, radius=None):
        res = real(beta, design, S, replace(options, max_inner_iters=2), radius)
        res.converged = False
        raise estimator.StalledRadius("trust radius collapsed after 2 iterations", res)

    monkeypatch.setattr(estimator, "maximize_penalized", stall)
    sc = Scenario(2)
    spec = ModelSpec("y1", "y2", mu1=(linear("x1"),), mu2=(intercept(), linear("x1")),
                     sigma2=(intercept(),), gamma=(intercept(),), margin="gamma")
    with pytest.warns(estimator.NonConvergence, match="collapsed"):
        res = fit(spec, generate(sc, 0, n=300))
    assert not res.converged
    assert len(res.trace) == 1 and not res.trace[0]["inner_converged"]
    assert np.all(np.isfinite(res.beta))


def test_ill_conditioned_but_definite_hessian_counts_as_converged():
    # this replicate ends with -H_p positive definite but with condition number
    # above 1e8, so V_bayes is floored while the fit itself is fine
    sc = Scenario(1, n=1000)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = fit(study_spec(sc), generate(sc, 52))
    assert res.trace[-1].get("penalized_hessian_floored")
    assert np.linalg.eigvalsh(-res.Hp)[0] > 0
    assert res.converged
    assert np.all(np.linalg.eigvalsh(res.V_bayes) > 0)
