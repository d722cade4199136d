"""Log-likelihood of the mixed ordinal-continuous copula model.

For an observation in ordinal category r with continuous response y2 the
contribution is

    log{ h(u_r, v) - h(u_{r-1}, v) } + log f2(y2),

with ``u_r = F1(theta_r - eta_mu1)``, ``v = F2(y2)`` and ``h = dC/dv``.  The
analytic gradient and observed Hessian are obtained by first differentiating
with respect to five per-observation quantities (the two latent arguments,
both continuous-margin predictors and the dependence predictor) and then
mapping to coefficients through the design matrices and the cut-point
Jacobian.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .copulas import EPS, copula_derivatives, gamma_unlink_derivs
from .margins import ContinuousMargin, OrdinalMargin, continuous_bundle, expand_cutpoints
from .predictor import DesignSet

# local variables
T_UP, T_LO, M, S, G = range(5)


class InfeasiblePoint(ArithmeticError):
    """Raised only on request; by default infeasibility is reported as -inf."""


@dataclass
class Evaluation:
    """Log-likelihood (and optionally derivatives) at one coefficient vector."""

    loglik: float
    feasible: bool
    gradient: np.ndarray | None = None
    hessian: np.ndarray | None = None
    per_obs: np.ndarray | None = None


def _margins(design: DesignSet):
    spec = design.spec
    return (OrdinalMargin(spec.link, design.n_categories),
            ContinuousMargin(spec.margin))


def linear_predictors(beta, design: DesignSet, X: dict | None = None) -> dict:
    X = X or {p: design.X(p) for p in design.params}
    return {p: design.eta(beta, p, X[p]) for p in ("mu1", "mu2", "sigma2", "gamma")}


class _HDerivs:
    """h-function and its derivatives at one of the two latent arguments."""

    __slots__ = ("h", "hu", "hv", "hg", "huu", "huv", "hug", "hvv", "hvg", "hgg")

    @classmethod
    def independence(cls, u):
        o = cls()
        z = np.zeros_like(u)
        o.h, o.hu = u, np.ones_like(u)
        o.hv = o.hg = o.huu = o.huv = o.hug = o.hvv = o.hvg = o.hgg = z
        return o

    @classmethod
    def copula(cls, family, u, v, gamma):
        b = copula_derivatives(family, u, v, gamma, with_value=False)
        o = cls()
        o.h, o.hu, o.hv, o.hg = b.dC_dv, b.d2C_dudv, b.d2C_dv2, b.d2C_dvdgamma
        o.huu, o.huv, o.hug = b.d3C_du2dv, b.d3C_dudv2, b.d3C_dudvdgamma
        o.hvv, o.hvg, o.hgg = b.d3C_dv3, b.d3C_dv2dgamma, b.d3C_dvdgamma2
        return o

    def mask(self, rows, value):
        """Overwrite sentinel rows: h = value, all derivatives zero."""
        for name in self.__slots__:
            arr = np.array(getattr(self, name), dtype=float, copy=True)
            arr[rows] = value if name == "h" else 0.0
            setattr(self, name, arr)
        return self


def evaluate(beta, design: DesignSet, *, order: int = 0, X: dict | None = None,
             y1=None, y2=None) -> Evaluation:
    """Evaluate the (unpenalized) log-likelihood.

    Parameters
    ----------
    beta : ndarray
        Full coefficient vector.
    design : DesignSet
    order : {0, 1, 2}
        0 for the value only, 1 adds the gradient, 2 adds the Hessian.
    X, y1, y2 : optional
        Alternative design matrices and responses (used for new data).

    Returns
    -------
    Evaluation
        ``loglik = -inf`` and ``feasible = False`` when some observation has a
        nonpositive probability.
    """
    beta = np.asarray(beta, dtype=float)
    spec = design.spec
    ordm, contm = _margins(design)
    X = X or {p: design.X(p) for p in design.params}
    y1 = design.y1 if y1 is None else np.asarray(y1, dtype=int)
    y2 = design.y2 if y2 is None else np.asarray(y2, dtype=float)
    n = y1.size
    R = design.n_cut
    if not np.all(np.isfinite(beta)):
        return Evaluation(-np.inf, False)
    cuts = expand_cutpoints(beta[:R])
    eta = linear_predictors(beta, design, X)
    th = cuts.padded()
    top = y1 == design.n_categories
    bottom = y1 == 1
    with np.errstate(invalid="ignore", over="ignore"):
        t_up = th[y1] - eta["mu1"]
        t_lo = th[y1 - 1] - eta["mu1"]
    u_up = np.where(top, 1.0, ordm.cdf(np.where(top, 0.0, t_up)))
    u_lo = np.where(bottom, 0.0, ordm.cdf(np.where(bottom, 0.0, t_lo)))

    try:
        mb = continuous_bundle(contm, y2, eta["mu2"], eta["sigma2"], derivatives=order > 0)
    except FloatingPointError:
        return Evaluation(-np.inf, False)
    v = np.clip(mb.F, EPS, 1 - EPS)
    # the copula sees clamped probabilities; their derivatives vanish there
    v_free = (mb.F > EPS) & (mb.F < 1 - EPS)
    u_up_free = top | ((u_up > EPS) & (u_up < 1 - EPS)) | (spec.copula is None)
    u_lo_free = bottom | ((u_lo > EPS) & (u_lo < 1 - EPS)) | (spec.copula is None)
    with np.errstate(all="ignore"):
        if spec.copula is None:
            up = _HDerivs.independence(u_up)
            lo = _HDerivs.independence(u_lo)
            g1 = g2 = np.zeros(n)
        else:
            gamma, g1, g2 = gamma_unlink_derivs(spec.copula, eta["gamma"])
            gamma = np.broadcast_to(gamma, (n,))
            try:
                up = _HDerivs.copula(spec.copula, u_up, v, gamma).mask(top, 1.0)
                lo = _HDerivs.copula(spec.copula, u_lo, v, gamma).mask(bottom, 0.0)
            except Exception:  # parameter outside range, overflow in generated code
                return Evaluation(-np.inf, False)
        D = up.h - lo.h
        ll_i = np.log(D) + mb.logf
    if not np.all(np.isfinite(ll_i)) or np.any(D <= 0):
        return Evaluation(-np.inf, False)
    ll = float(np.sum(ll_i))
    if order == 0:
        return Evaluation(ll, True, per_obs=ll_i)

    f_up = np.where(top | ~u_up_free, 0.0, ordm.pdf(np.where(top, 0.0, t_up)))
    f_lo = np.where(bottom | ~u_lo_free, 0.0, ordm.pdf(np.where(bottom, 0.0, t_lo)))
    vm, vs = np.where(v_free, mb.dF, 0.0)
    dD = np.zeros((5, n))
    dD[T_UP] = up.hu * f_up
    dD[T_LO] = -lo.hu * f_lo
    dhv = up.hv - lo.hv
    dD[M] = dhv * vm
    dD[S] = dhv * vs
    dD[G] = (up.hg - lo.hg) * g1
    grad_local = dD / D
    grad_local[M] += mb.dlogf[0]
    grad_local[S] += mb.dlogf[1]

    maps = _local_maps(design, X, cuts.jacobian, y1, top, bottom)
    p = beta.size
    grad = np.zeros(p)
    for k, (cols, A) in enumerate(maps):
        if A is not None:
            grad[cols] += A.T @ grad_local[k]
    # the cut-point block picks up no extra term at first order
    if order == 1:
        return Evaluation(ll, True, gradient=grad, per_obs=ll_i)

    fp_up = np.where(top | ~u_up_free, 0.0, ordm.pdf_deriv(np.where(top, 0.0, t_up)))
    fp_lo = np.where(bottom | ~u_lo_free, 0.0, ordm.pdf_deriv(np.where(bottom, 0.0, t_lo)))
    vmm, vms, vss = np.where(v_free, mb.d2F, 0.0)
    d2 = np.zeros((5, 5, n))
    d2[T_UP, T_UP] = up.huu * f_up ** 2 + up.hu * fp_up
    d2[T_LO, T_LO] = -(lo.huu * f_lo ** 2 + lo.hu * fp_lo)
    d2[T_UP, M] = up.huv * f_up * vm
    d2[T_UP, S] = up.huv * f_up * vs
    d2[T_UP, G] = up.hug * f_up * g1
    d2[T_LO, M] = -lo.huv * f_lo * vm
    d2[T_LO, S] = -lo.huv * f_lo * vs
    d2[T_LO, G] = -lo.hug * f_lo * g1
    dhvv = up.hvv - lo.hvv
    dhvg = up.hvg - lo.hvg
    d2[M, M] = dhvv * vm * vm + dhv * vmm
    d2[M, S] = dhvv * vm * vs + dhv * vms
    d2[S, S] = dhvv * vs * vs + dhv * vss
    d2[M, G] = dhvg * vm * g1
    d2[S, G] = dhvg * vs * g1
    d2[G, G] = (up.hgg - lo.hgg) * g1 * g1 + (up.hg - lo.hg) * g2
    for a in range(5):
        for b in range(a):
            d2[a, b] = d2[b, a]
    hess_local = d2 / D - dD[:, None, :] * dD[None, :, :] / D ** 2
    hess_local[M, M] += mb.d2logf[0]
    hess_local[M, S] += mb.d2logf[1]
    hess_local[S, M] += mb.d2logf[1]
    hess_local[S, S] += mb.d2logf[2]

    H = np.zeros((p, p))
    for a in range(5):
        ca, Aa = maps[a]
        if Aa is None:
            continue
        for b in range(a, 5):
            cb, Ab = maps[b]
            if Ab is None:
                continue
            block = Aa.T @ (hess_local[a, b][:, None] * Ab)
            H[np.ix_(ca, cb)] += block
            if b != a:
                H[np.ix_(cb, ca)] += block.T
    # curvature of the cut-point transform: d2 theta_r / d theta*_h^2 = 2, 2 <= h <= r
    if R > 1:
        idx_up = np.where(top, 0, y1)      # number of thresholds in theta_r
        idx_lo = y1 - 1
        hh = np.arange(2, R + 1)
        w = (grad_local[T_UP][:, None] * (hh[None, :] <= idx_up[:, None])
             + grad_local[T_LO][:, None] * (hh[None, :] <= idx_lo[:, None]))
        H[hh - 1, hh - 1] += 2 * w.sum(axis=0)
    H = 0.5 * (H + H.T)
    return Evaluation(ll, True, gradient=grad, hessian=H, per_obs=ll_i)


def _local_maps(design, X, jac, y1, top, bottom):
    """For each local variable: (global column indices, n x k derivative matrix)."""
    R = design.n_cut
    sl = design.slices
    X1 = X["mu1"]
    cut_cols = np.arange(R)

    def cut_rows(idx, sentinel):
        J = np.zeros((y1.size, R))
        ok = ~sentinel
        J[ok] = jac[idx[ok]]
        return J

    up_rows = cut_rows(np.where(top, 0, y1 - 1), top)
    lo_rows = cut_rows(np.where(bottom, 0, y1 - 2), bottom)
    mu1_cols = np.arange(sl["mu1"].start, sl["mu1"].stop)
    t_cols = np.concatenate([cut_cols, mu1_cols])
    maps = [
        (t_cols, np.hstack([up_rows, -X1])),
        (t_cols, np.hstack([lo_rows, -X1])),
    ]
    for p in ("mu2", "sigma2", "gamma"):
        cols = np.arange(sl[p].start, sl[p].stop)
        maps.append((cols, X[p] if cols.size else None))
    return maps


def loglik(beta, design: DesignSet) -> float:
    return evaluate(beta, design).loglik


def loglik_penalized(beta, design: DesignSet, S_lambda) -> float:
    beta = np.asarray(beta, dtype=float)
    ll = loglik(beta, design)
    if not np.isfinite(ll):
        return ll
    return ll - 0.5 * float(beta @ S_lambda @ beta)


def gradient(beta, design: DesignSet, S_lambda=None) -> np.ndarray:
    ev = evaluate(beta, design, order=1)
    if not ev.feasible:
        raise InfeasiblePoint("gradient requested at an infeasible point")
    g = ev.gradient
    return g if S_lambda is None else g - S_lambda @ np.asarray(beta, dtype=float)


def hessian(beta, design: DesignSet, S_lambda=None) -> np.ndarray:
    ev = evaluate(beta, design, order=2)
    if not ev.feasible:
        raise InfeasiblePoint("Hessian requested at an infeasible point")
    H = ev.hessian
    return H if S_lambda is None else H - S_lambda


def finite_difference_check(beta, design: DesignSet, step: float = 1e-6, S_lambda=None):
    """Central finite-difference gradient and Hessian (for verification).

    With ``S_lambda`` the penalized log-likelihood is differenced.

    Returns
    -------
    (g_fd, H_fd) : tuple of ndarray
        ``g_fd`` differences the log-likelihood, ``H_fd`` the analytic gradient.
    """
    beta = np.asarray(beta, dtype=float)
    p = beta.size
    S = np.zeros((p, p)) if S_lambda is None else np.asarray(S_lambda, dtype=float)
    g_fd = np.zeros(p)
    H_fd = np.zeros((p, p))
    for j in range(p):
        e = np.zeros(p)
        h = step * max(1.0, abs(beta[j]))
        e[j] = h
        g_fd[j] = (loglik_penalized(beta + e, design, S)
                   - loglik_penalized(beta - e, design, S)) / (2 * h)
        H_fd[:, j] = (gradient(beta + e, design, S) - gradient(beta - e, design, S)) / (2 * h)
    return g_fd, H_fd
