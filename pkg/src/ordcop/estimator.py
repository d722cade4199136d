"""Penalized maximum likelihood with a trust-region optimizer and automatic
smoothing-parameter selection.

The fitting loop alternates two steps until the log-likelihood stabilises:

1. maximise the penalized log-likelihood for fixed smoothing parameters with
   an exact-subproblem trust-region method;
2. update the smoothing parameters by minimising an unbiased risk criterion
   built from the working quantities at the current coefficients.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, optimize, stats

from . import copulas
from .likelihood import evaluate
from .margins import ContinuousFamily, OrdinalMargin, collapse_cutpoints
from .model import TermKind
from .predictor import DesignSet, build_design


class StalledRadius(RuntimeError):
    """Trust radius shrank to nothing before the gradient vanished.

    ``result`` holds the last accepted iterate as an ``InnerResult``.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class NonConvergence(RuntimeWarning):
    pass


class NonPDInformation(RuntimeWarning):
    pass


@dataclass(frozen=True)
class FitOptions:
    """Optimizer settings.

    Attributes
    ----------
    max_outer_iters : int
        Maximum number of (trust region, smoothing update) cycles.
    tol : float
        Outer tolerance on the relative change of the log-likelihood.
    initial_radius : float
        Starting trust-region radius.
    lambda_init : float
        Starting value of every smoothing parameter.
    pd_floor : float
        Eigenvalues of information matrices are floored at
        ``pd_floor * max|eigenvalue|``.
    max_inner_iters : int
        Trust-region iterations per outer cycle.
    grad_tol : float
        Inner stopping rule ``max|g_p| <= grad_tol * (1 + |l_p|)``.
    log_lambda_bounds : tuple of float
    """

    max_outer_iters: int = 100
    tol: float = 1e-7
    initial_radius: float = 1.0
    lambda_init: float = 1.0
    pd_floor: float = 1e-8
    max_inner_iters: int = 200
    grad_tol: float = 1e-8
    max_radius: float = 1e4
    log_lambda_bounds: tuple = (-15.0, 15.0)


# ---------------------------------------------------------------------------
# trust region

@dataclass
class TrustState:
    beta: np.ndarray
    radius: float
    iteration: int = 0
    value: float = -np.inf
    accepted: bool = False
    hit_boundary: bool = False


def solve_trust_subproblem(g, H, radius):
    """Maximise ``g'p + p'Hp/2`` subject to ``||p|| <= radius`` exactly.

    Works with the eigendecomposition of ``B = -H`` and solves the secular
    equation ``||(B + sigma I)^{-1} g|| = radius`` for the shift ``sigma``,
    including the so-called hard case.

    Returns
    -------
    p : ndarray
    on_boundary : bool
    """
    g = np.asarray(g, dtype=float)
    B = -0.5 * (np.asarray(H, dtype=float) + np.asarray(H, dtype=float).T)
    lam, Q = linalg.eigh(B)
    gt = Q.T @ g
    lmin = lam[0]
    scale = max(1.0, np.max(np.abs(lam)))
    if lmin > 1e-14 * scale:
        p = Q @ (gt / lam)
        if np.linalg.norm(p) <= radius:
            return p, False

    def norm_at(sig):
        return np.linalg.norm(gt / (lam + sig))

    lo = max(0.0, -lmin)
    tiny = 1e-14 * scale
    small = np.abs(gt) <= 1e-12 * max(np.linalg.norm(g), 1e-300)
    hard = np.all(small[lam <= lmin + tiny])
    if hard:
        # in the hard case the secular function stays finite at -lmin
        with np.errstate(divide="ignore", invalid="ignore"):
            gt_r = np.where(lam <= lmin + tiny, 0.0, gt)
            denom = lam + lo
            p_t = np.where(lam <= lmin + tiny, 0.0, gt_r / np.where(denom == 0, 1.0, denom))
        nrm = np.linalg.norm(p_t)
        if nrm <= radius:
            z = Q[:, 0]
            tau = math.sqrt(max(radius ** 2 - nrm ** 2, 0.0))
            return Q @ p_t + tau * z, True
    a = lo + tiny
    while norm_at(a) < radius and a > lo:
        # numerical edge: the gradient component is tiny but not negligible
        a = lo + (a - lo) * 1e-3
        if a - lo < 1e-300:
            break
    b = max(a * 2, np.linalg.norm(g) / radius + abs(lmin) + 1.0)
    while norm_at(b) > radius:
        b *= 2
    if norm_at(a) <= radius:
        sig = a
    else:
        sig = optimize.brentq(lambda s: 1.0 / radius - 1.0 / norm_at(s), a, b,
                              xtol=1e-14 * max(1.0, b), rtol=1e-14, maxiter=500)
    p = Q @ (gt / (lam + sig))
    nrm = np.linalg.norm(p)
    if nrm > radius:
        p *= radius / nrm
    return p, True


def trust_step(state: TrustState, objective, derivs=None, options: FitOptions = FitOptions()):
    """One trust-region iteration.

    Parameters
    ----------
    state : TrustState
    objective : callable
        ``objective(beta, order)`` returning ``(value, gradient, hessian)``;
        the value is ``-inf`` at infeasible points.
    derivs : tuple, optional
        ``(g_p, H_p)`` at ``state.beta`` if already available.

    Returns
    -------
    TrustState
    """
    if derivs is None:
        val, g, H = objective(state.beta, 2)
        state.value = val
    else:
        g, H = derivs
    p, boundary = solve_trust_subproblem(g, H, state.radius)
    pred = float(g @ p + 0.5 * p @ H @ p)
    new_beta = state.beta + p
    new_val = objective(new_beta, 0)[0]
    out = TrustState(state.beta, state.radius, state.iteration + 1, state.value, False, boundary)
    if not np.isfinite(new_val):
        out.radius = state.radius / 2
        return out
    actual = new_val - state.value
    if pred <= 0:
        rho = 1.0 if actual >= 0 else -1.0
    else:
        rho = actual / pred
    if rho < 0.25:
        out.radius = state.radius / 4
    elif rho > 0.75 and boundary:
        out.radius = min(2 * state.radius, options.max_radius)
    if rho >= 0.1 and actual >= 0:
        out.beta = new_beta
        out.value = new_val
        out.accepted = True
    return out


def make_objective(design: DesignSet, S):
    def objective(beta, order):
        ev = evaluate(beta, design, order=order)
        if not ev.feasible:
            return -np.inf, None, None
        pen = 0.5 * float(beta @ S @ beta)
        if order == 0:
            return ev.loglik - pen, None, None
        return ev.loglik - pen, ev.gradient - S @ beta, ev.hessian - S
    return objective


@dataclass
class InnerResult:
    beta: np.ndarray
    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    iterations: int
    radius: float
    converged: bool
    accepted_values: list


def maximize_penalized(beta0, design: DesignSet, S, options: FitOptions = FitOptions(),
                       radius: float | None = None) -> InnerResult:
    """Trust-region maximisation of the penalized log-likelihood for fixed S."""
    objective = make_objective(design, S)
    beta = np.asarray(beta0, dtype=float).copy()
    val, g, H = objective(beta, 2)
    if not np.isfinite(val):
        raise FloatingPointError("starting values are infeasible")
    state = TrustState(beta, options.initial_radius if radius is None else radius, value=val)
    values = [val]
    converged = False
    it = 0
    for it in range(1, options.max_inner_iters + 1):
        if np.max(np.abs(g), initial=0.0) <= options.grad_tol * (1 + abs(state.value)):
            converged = True
            break
        state = trust_step(state, objective, (g, H), options)
        if state.accepted:
            values.append(state.value)
            prev_val = values[-2]
            val, g, H = objective(state.beta, 2)
            state.value = val
            # negligible progress with a small gradient: stop
            if (abs(val - prev_val) <= 1e-14 * (1 + abs(val))
                    and np.max(np.abs(g), initial=0.0) <= 1e-5 * (1 + abs(val))):
                converged = True
                break
        if state.radius < 1e-12 * (1 + np.linalg.norm(state.beta)):
            converged = np.max(np.abs(g), initial=0.0) <= 1e-5 * (1 + abs(state.value))
            if not converged:
                partial = InnerResult(state.beta, state.value, g, H, it, state.radius,
                                      False, values)
                raise StalledRadius(f"trust radius collapsed after {it} iterations", partial)
            break
    return InnerResult(state.beta, state.value, g, H, it, state.radius, converged, values)


# ---------------------------------------------------------------------------
# smoothing parameters

def pd_floor(M, factor: float = 1e-8):
    """Symmetric eigen-decomposition with eigenvalues floored at ``factor*max|eig|``.

    Returns
    -------
    (eigenvalues, eigenvectors, floored) : tuple
    """
    M = 0.5 * (M + M.T)
    w, Q = linalg.eigh(M)
    floor = factor * max(np.max(np.abs(w)), 1e-300)
    floored = bool(np.any(w < floor))
    return np.maximum(w, floor), Q, floored


def lambda_criterion(log_lam, Ihalf, M, design: DesignSet):
    """Risk criterion ``||M - A M||^2 + 2 tr(A)`` and ``tr(A)``."""
    lam = np.exp(np.asarray(log_lam, dtype=float))
    S = design.assemble_penalty(lam)
    info = Ihalf @ Ihalf
    K = info + S
    try:
        c = linalg.cho_factor(K)
        A = Ihalf @ linalg.cho_solve(c, Ihalf)
    except linalg.LinAlgError:
        A = Ihalf @ linalg.solve(K, Ihalf, assume_a="sym")
    r = M - A @ M
    tr = float(np.trace(A))
    return float(r @ r) + 2 * tr, tr


def select_lambda(beta, g, H, design: DesignSet, lam0=None, options: FitOptions = FitOptions()):
    """Update the smoothing parameters at the current coefficients.

    Parameters
    ----------
    beta, g, H : ndarray
        Coefficients and the unpenalized gradient and Hessian there.
    lam0 : ndarray, optional
        Starting values (default ``options.lambda_init``).

    Returns
    -------
    lam : ndarray
    info : dict
        ``criterion``, ``edf`` and whether the information matrix was floored.
    """
    m = design.n_lambda
    w, Q, floored = pd_floor(-H, options.pd_floor)
    if floored:
        warnings.warn("information matrix not positive definite; eigenvalues floored",
                      NonPDInformation, stacklevel=2)
    Ihalf = (Q * np.sqrt(w)) @ Q.T
    Iinvhalf = (Q / np.sqrt(w)) @ Q.T
    M = Ihalf @ beta + Iinvhalf @ g
    if m == 0:
        crit, tr = lambda_criterion(np.zeros(0), Ihalf, M, design)
        return np.zeros(0), {"criterion": crit, "edf": tr, "floored": floored}
    if lam0 is None:
        lam0 = np.full(m, options.lambda_init)
    lo, hi = options.log_lambda_bounds
    x0 = np.clip(np.log(np.maximum(lam0, 1e-300)), lo, hi)
    f = lambda x: lambda_criterion(x, Ihalf, M, design)[0]
    h = 1e-4

    def grad(x):
        out = np.zeros_like(x)
        for j in range(x.size):
            e = np.zeros_like(x)
            e[j] = h
            out[j] = (f(x + e) - f(x - e)) / (2 * h)
        return out

    res = optimize.minimize(f, x0, jac=grad, method="L-BFGS-B", bounds=[(lo, hi)] * m,
                            options={"ftol": 1e-12, "gtol": 1e-7, "maxiter": 200})
    x = res.x if res.fun <= f(x0) else x0
    crit, tr = lambda_criterion(x, Ihalf, M, design)
    return np.exp(x), {"criterion": crit, "edf": tr, "floored": floored}


# ---------------------------------------------------------------------------
# starting values

def _intercept_index(design: DesignSet, param: str):
    pos = design.slices[param].start
    for t in design.params[param].terms:
        if t.spec.kind is TermKind.INTERCEPT:
            return pos
        pos += t.n_cols
    return None


def _margin_moments(family, y2):
    y2 = np.asarray(y2, dtype=float)
    if family is ContinuousFamily.LOGNORMAL:
        ly = np.log(y2)
        return ly.mean(), math.log(max(ly.std(), 1e-3))
    if family is ContinuousFamily.NORMAL:
        return y2.mean(), math.log(max(y2.std(), 1e-8))
    m = y2.mean()
    return math.log(m), math.log(max(y2.std() / m, 1e-3))


def dependence_start(family, y1, y2) -> float:
    """Working-scale copula parameter implied by the empirical Kendall's tau."""
    fam = copulas.as_family(family)
    tau = stats.kendalltau(y1, y2).statistic
    if not np.isfinite(tau):
        tau = 0.0
    lo, hi = copulas.tau_range(fam)
    try:
        gamma = copulas.tau_to_gamma(fam, tau)
    except copulas.UnattainableTau:
        if lo < 0 < hi or (tau >= hi and hi > 0):
            # dependence of the supported sign but beyond the attainable range
            target = hi - 1e-6 if tau >= hi else lo + 1e-6
            gamma = copulas.tau_to_gamma(fam, target)
        else:
            gamma = copulas.default_gamma(fam)
    g_lo, g_hi = copulas.gamma_range(fam)
    gamma = float(np.clip(gamma, g_lo + copulas.EPS, g_hi - copulas.EPS))
    return copulas.gamma_link(fam, gamma)


def naive_start(design: DesignSet) -> np.ndarray:
    """Moment-based starting vector (cut points from marginal proportions)."""
    beta = np.zeros(design.n_coef)
    om = OrdinalMargin(design.spec.link, design.n_categories)
    props = np.bincount(design.y1, minlength=design.n_categories + 1)[1:] / design.n
    cum = np.clip(np.cumsum(props)[:-1], 1e-6, 1 - 1e-6)
    theta = om.ppf(cum)
    theta = np.maximum.accumulate(theta + np.arange(theta.size) * 1e-6)
    beta[:design.n_cut] = collapse_cutpoints(theta)
    m, s = _margin_moments(design.spec.margin, design.y2)
    i = _intercept_index(design, "mu2")
    if i is not None:
        beta[i] = m
    i = _intercept_index(design, "sigma2")
    if i is not None:
        beta[i] = s
    return beta


def starting_values(design: DesignSet, options: FitOptions = FitOptions(), *,
                    independent_fit=None):
    """Starting coefficients for the bivariate model.

    The margins come from a fit of the independence model (which factorises
    into the two univariate models), the dependence intercept from the
    empirical Kendall's tau between the two responses.

    Returns
    -------
    beta : ndarray
    lam : ndarray
        Smoothing parameters of the marginal blocks carried over, dependence
        blocks at ``lambda_init``.
    indep : FitResult or None
    """
    spec = design.spec
    if spec.copula is None:
        return naive_start(design), np.full(design.n_lambda, options.lambda_init), None
    ind_design = design.without_gamma()
    indep = independent_fit or _fit_design(ind_design, options)
    beta = np.zeros(design.n_coef)
    beta[:ind_design.n_coef] = indep.beta
    i = _intercept_index(design, "gamma")
    if i is not None:
        beta[i] = dependence_start(spec.copula, design.y1, design.y2)
    lam = np.full(design.n_lambda, options.lambda_init)
    lam[:ind_design.n_lambda] = indep.lam
    return beta, lam, indep


# ---------------------------------------------------------------------------
# fitting

@dataclass
class FitResult:
    """Estimates and inferential ingredients of a fitted model."""

    design: DesignSet
    beta: np.ndarray
    lam: np.ndarray
    loglik: float
    loglik_penalized: float
    edf: float
    aic: float
    bic: float
    H: np.ndarray
    Hp: np.ndarray
    V_bayes: np.ndarray
    V_freq: np.ndarray
    gradient_penalized: np.ndarray
    converged: bool
    trace: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    options: FitOptions = FitOptions()

    @property
    def spec(self):
        return self.design.spec

    @property
    def n(self):
        return self.design.n

    @property
    def coef_names(self):
        return self.design.coef_names()

    @property
    def se(self):
        return np.sqrt(np.diag(self.V_bayes))

    def block_edf(self):
        """edf per coefficient block (cut points, mu1, mu2, sigma2, gamma)."""
        F = self._edf_matrix()
        d = np.diag(F)
        out = {"cut": float(d[:self.design.n_cut].sum())}
        for p, sl in self.design.slices.items():
            out[p] = float(d[sl].sum())
        return out

    def term_edf(self):
        """edf per penalized term."""
        d = np.diag(self._edf_matrix())
        return {f"{b.param}:{b.label}": float(d[b.index].sum()) for b in self.design.penalties}

    def _edf_matrix(self):
        w, Q, _ = pd_floor(-self.H, self.options.pd_floor)
        info = (Q * w) @ Q.T
        S = self.design.assemble_penalty(self.lam)
        return linalg.solve(info + S, info, assume_a="sym")


def information_criteria(loglik, edf, n):
    return -2 * loglik + 2 * edf, -2 * loglik + math.log(n) * edf


def _fit_design(design: DesignSet, options: FitOptions, beta0=None, lam0=None) -> FitResult:
    warn_list = []
    if beta0 is None:
        beta0, lam_start, _ = starting_values(design, options)
        if lam0 is None:
            lam0 = lam_start
    lam = np.full(design.n_lambda, options.lambda_init) if lam0 is None else np.asarray(lam0, float)
    beta = np.asarray(beta0, dtype=float)
    trace = []
    converged = False
    radius = options.initial_radius
    ll_old = None
    step_old = None
    inner = None
    floored_any = False
    for a in range(options.max_outer_iters):
        S = design.assemble_penalty(lam)
        try:
            inner = maximize_penalized(beta, design, S, options, radius)
        except StalledRadius as exc:
            # reported as nonconvergence; keep the last accepted iterate
            warn_list.append(f"outer iteration {a}: {exc}")
            inner = exc.result
            beta = inner.beta
            trace.append({"iteration": a, "loglik": evaluate(beta, design, order=0).loglik,
                          "loglik_penalized": inner.value, "lambda": lam.tolist(),
                          "inner_iterations": inner.iterations, "inner_converged": False})
            break
        beta = inner.beta
        radius = max(inner.radius, 1e-3)
        ev = evaluate(beta, design, order=2)
        ll = ev.loglik
        trace.append({"iteration": a, "loglik": ll, "loglik_penalized": inner.value,
                      "lambda": lam.tolist(), "inner_iterations": inner.iterations,
                      "inner_converged": inner.converged})
        if design.n_lambda == 0:
            converged = inner.converged
            break
        if ll_old is not None and abs(ll - ll_old) / (0.1 + abs(ll)) < options.tol \
                and inner.converged:
            converged = True
            break
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            lam_new, info = select_lambda(beta, ev.gradient, ev.hessian, design, lam, options)
        # Performance iteration can settle into a period-two cycle in log(lambda);
        # halving any step that reverses the previous one damps it out.
        step = np.log(lam_new) - np.log(lam)
        if step_old is not None and float(step @ step_old) < 0:
            step = 0.5 * step
        lam = np.exp(np.log(lam) + step)
        step_old = step
        floored_any |= any(issubclass(w.category, NonPDInformation) for w in caught)
        trace[-1]["criterion"] = info["criterion"]
        ll_old = ll
    else:
        warn_list.append(f"no convergence within {options.max_outer_iters} outer iterations")
    if inner is None:
        raise RuntimeError("optimizer failed before the first iteration")
    if not converged and not warn_list:
        warn_list.append("trust-region iterations did not converge")
    S = design.assemble_penalty(lam)
    ev = evaluate(beta, design, order=2)
    H = ev.hessian
    Hp = H - S
    gp = ev.gradient - S @ beta
    negHp = -Hp
    w, Q, floored_p = pd_floor(negHp, options.pd_floor)
    # the floor only conditions V_bayes; convergence fails on a true indefiniteness
    not_pd = floored_p and float(linalg.eigvalsh(0.5 * (negHp + negHp.T))[0]) <= 0.0
    if not_pd:
        warn_list.append("penalized Hessian not negative definite at convergence")
    V_b = (Q / w) @ Q.T
    V_b = 0.5 * (V_b + V_b.T)
    wI, QI, _ = pd_floor(-H, options.pd_floor)
    info = (QI * wI) @ QI.T
    V_f = V_b @ info @ V_b
    V_f = 0.5 * (V_f + V_f.T)
    edf = float(np.trace(linalg.solve(info + S, info, assume_a="sym")))
    aic, bic = information_criteria(ev.loglik, edf, design.n)
    if floored_any:
        trace[-1]["information_floored"] = True
    if floored_p:
        trace[-1]["penalized_hessian_floored"] = True
    for msg in warn_list:
        warnings.warn(msg, NonConvergence, stacklevel=3)
    return FitResult(design, beta, lam, ev.loglik, ev.loglik - 0.5 * float(beta @ S @ beta),
                     edf, aic, bic, H, Hp, V_b, V_f, gp, converged and not not_pd, trace,
                     warn_list, options)


def fit(spec, data=None, options: FitOptions | None = None, *, design: DesignSet | None = None,
        start=None) -> FitResult:
    """Fit a model.

    Parameters
    ----------
    spec : ModelSpec
    data : DataFrame or mapping
        Ignored when ``design`` is given.
    options : FitOptions, optional
    design : DesignSet, optional
        Prebuilt design.
    start : (beta, lam), optional
        Starting coefficients and smoothing parameters.

    Returns
    -------
    FitResult
        ``converged`` is False (and ``warnings`` is nonempty) when the
        iteration limit was reached or the penalized Hessian is not negative
        definite at the estimate.
    """
    options = options or FitOptions()
    if design is None:
        design = build_design(spec, data)
    elif spec is not None and design.spec != spec:
        raise ValueError("design was built for a different model specification")
    if start is not None:
        return _fit_design(design, options, *start)
    beta0, lam0, _ = starting_values(design, options)
    return _fit_design(design, options, beta0, lam0)


def fit_pair(spec, data=None, options: FitOptions | None = None, *, design=None):
    """Fit the bivariate model and the independence model sharing the start.

    Returns
    -------
    (bivariate, independence) : tuple of FitResult
    """
    options = options or FitOptions()
    if design is None:
        design = build_design(spec, data)
    ind_design = design.without_gamma()
    indep = _fit_design(ind_design, options)
    if spec.copula is None:
        return indep, indep
    beta0, lam0, _ = starting_values(design, options, independent_fit=indep)
    return _fit_design(design, options, beta0, lam0), indep


def refit_options(options: FitOptions, **kw) -> FitOptions:
    return replace(options, **kw)
