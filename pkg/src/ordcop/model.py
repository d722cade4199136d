"""Declarative model specification."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

from .copulas import CopulaFamily, as_family
from .margins import ContinuousFamily, Link

PARAMS = ("mu1", "mu2", "sigma2", "gamma")


class TermKind(str, enum.Enum):
    INTERCEPT = "intercept"
    LINEAR = "linear"
    SPLINE = "spline"
    MRF = "mrf"
    RANDOM = "random"


@dataclass(frozen=True)
class TermSpec:
    """One additive term of a predictor.

    Parameters
    ----------
    kind : TermKind
    covariate : str, optional
        Column name; not used by intercepts.
    basis_dim : int
        Number of B-spline basis functions before the centring constraint.
    penalty_order : int
        Order of the difference penalty of a spline.
    adjacency : str or tuple of (str, str), optional
        For MRF terms: path of an edge-list file or the edges themselves.
    """

    kind: TermKind
    covariate: str | None = None
    basis_dim: int = 10
    penalty_order: int = 2
    adjacency: str | tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", TermKind(self.kind))
        if self.kind is not TermKind.INTERCEPT and not self.covariate:
            raise ValueError(f"{self.kind.value} term needs a covariate")
        if self.kind is TermKind.SPLINE:
            if self.penalty_order < 1:
                raise ValueError("penalty_order must be >= 1")
            if self.basis_dim < max(4, self.penalty_order + 2):
                raise ValueError("basis_dim too small for a cubic spline with this penalty")
        if self.kind is TermKind.MRF and self.adjacency is None:
            raise ValueError("mrf term needs an adjacency")
        if isinstance(self.adjacency, list):
            object.__setattr__(self, "adjacency", tuple(tuple(e) for e in self.adjacency))

    @property
    def penalized(self) -> bool:
        return self.kind in (TermKind.SPLINE, TermKind.MRF, TermKind.RANDOM)

    @property
    def label(self) -> str:
        if self.kind is TermKind.INTERCEPT:
            return "(Intercept)"
        if self.kind is TermKind.LINEAR:
            return self.covariate
        prefix = {TermKind.SPLINE: "s", TermKind.MRF: "mrf", TermKind.RANDOM: "re"}[self.kind]
        return f"{prefix}({self.covariate})"


def intercept() -> TermSpec:
    return TermSpec(TermKind.INTERCEPT)


def linear(x: str) -> TermSpec:
    return TermSpec(TermKind.LINEAR, x)


def spline(x: str, basis_dim: int = 10, penalty_order: int = 2) -> TermSpec:
    return TermSpec(TermKind.SPLINE, x, basis_dim=basis_dim, penalty_order=penalty_order)


def mrf(region: str, adjacency) -> TermSpec:
    return TermSpec(TermKind.MRF, region, adjacency=adjacency)


def random_effect(cluster: str) -> TermSpec:
    return TermSpec(TermKind.RANDOM, cluster)


@dataclass(frozen=True)
class ModelSpec:
    """Full description of a bivariate ordinal-continuous model.

    ``copula=None`` gives the independence model, whose likelihood factorises
    into the two margins and which has no dependence predictor.
    """

    response1: str
    response2: str
    mu1: tuple = ()
    mu2: tuple = (intercept(),)
    sigma2: tuple = (intercept(),)
    gamma: tuple = (intercept(),)
    margin: ContinuousFamily = ContinuousFamily.LOGNORMAL
    link: Link = Link.PROBIT
    copula: CopulaFamily | None = field(default_factory=lambda: CopulaFamily("gaussian"))
    factors: tuple = ()

    def __post_init__(self):
        for p in PARAMS:
            terms = tuple(getattr(self, p))
            object.__setattr__(self, p, terms)
            for t in terms:
                if not isinstance(t, TermSpec):
                    raise TypeError(f"{p}: expected TermSpec, got {t!r}")
        if any(t.kind is TermKind.INTERCEPT for t in self.mu1):
            raise ValueError("the mu1 predictor cannot contain an intercept; "
                             "the cut points play that role")
        object.__setattr__(self, "margin", ContinuousFamily(self.margin))
        object.__setattr__(self, "link", Link(self.link))
        if self.copula is not None:
            object.__setattr__(self, "copula", as_family(self.copula))
        object.__setattr__(self, "factors", tuple(self.factors))

    def terms(self, param: str) -> tuple:
        if param == "gamma" and self.copula is None:
            return ()
        return getattr(self, param)

    def covariates(self) -> list[str]:
        seen = []
        for p in PARAMS:
            for t in self.terms(p):
                if t.covariate and t.covariate not in seen:
                    seen.append(t.covariate)
        return seen

    def with_copula(self, copula) -> "ModelSpec":
        return replace(self, copula=None if copula is None else as_family(copula))

    def with_link(self, link) -> "ModelSpec":
        return replace(self, link=Link(link))

    def with_margin(self, margin) -> "ModelSpec":
        return replace(self, margin=ContinuousFamily(margin))

    @property
    def copula_name(self) -> str:
        return "independence" if self.copula is None else self.copula.name
