"""Design matrices and penalties for additive predictors.

Smooth terms are cubic B-splines with difference penalties.  Spatial terms
use the graph Laplacian of a region adjacency as penalty.  Random effects are
ridge penalised.  Splines and spatial terms are centred (their fitted values
sum to zero over the training rows) by absorbing the constraint into the
basis.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import interpolate

from .margins import check_categories
from .model import PARAMS, ModelSpec, TermKind, TermSpec


class MissingCovariate(KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "missing covariate"


class DisconnectedRegion(ValueError):
    """A region in the data does not appear in the adjacency structure."""


class UnknownLevel(ValueError):
    """A factor level, cluster or region was not seen when the design was built."""


class NegativeLambda(ValueError):
    pass


class RankDeficiency(UserWarning):
    pass


ISLAND_RIDGE = 1e-8


def _column(data, name):
    try:
        col = data[name]
    except (KeyError, IndexError):
        raise MissingCovariate(f"covariate column {name!r} not found in data") from None
    return np.asarray(col)


def _centring_basis(colsum):
    """Orthonormal basis of the complement of ``colsum`` (shape K x (K-1))."""
    q, _ = np.linalg.qr(colsum.reshape(-1, 1), mode="complete")
    return q[:, 1:]


def difference_penalty(k: int, order: int) -> np.ndarray:
    D = np.diff(np.eye(k), n=order, axis=0)
    return D.T @ D


def read_adjacency(source) -> list[tuple[str, str]]:
    """Edges from a ``region_a,region_b`` file or an iterable of pairs.

    Blank lines and lines starting with ``#`` are ignored; a line with a
    single region declares an island.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        edges = []
        with open(source) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = [p.strip() for p in line.split(",")]
                if len(parts) == 1 or parts[1] == "":
                    edges.append((parts[0], parts[0]))
                elif len(parts) == 2:
                    edges.append((parts[0], parts[1]))
                else:
                    raise ValueError(f"bad adjacency line: {line!r}")
        return edges
    return [(str(a), str(b)) for a, b in source]


def laplacian(regions: list[str], edges) -> np.ndarray:
    """Unweighted graph Laplacian; isolated regions receive a tiny ridge."""
    index = {r: i for i, r in enumerate(regions)}
    L = np.zeros((len(regions), len(regions)))
    for a, b in edges:
        if a == b:
            continue
        i, j = index[a], index[b]
        if L[i, j] == 0:
            L[i, j] = L[j, i] = -1.0
    np.fill_diagonal(L, 0.0)
    np.fill_diagonal(L, -L.sum(axis=1))
    island = np.diag(L) == 0
    L[island, island] = ISLAND_RIDGE
    return L


# ---------------------------------------------------------------------------
# built terms: each maps data columns to design columns for new rows too

@dataclass
class BuiltTerm:
    spec: TermSpec
    names: list
    penalty: np.ndarray | None = None     # in the constrained coordinates
    raw_penalty: np.ndarray | None = None  # before centring
    state: dict = field(default_factory=dict)

    @property
    def n_cols(self):
        return len(self.names)

    def basis(self, data, n: int) -> np.ndarray:
        kind = self.spec.kind
        st = self.state
        if kind is TermKind.INTERCEPT:
            return np.ones((n, 1))
        x = _column(data, self.spec.covariate)
        if kind is TermKind.LINEAR:
            if "levels" in st:
                return _dummies(x, st["levels"], self.spec.covariate)
            return np.asarray(x, dtype=float).reshape(-1, 1)
        if kind is TermKind.SPLINE:
            B = interpolate.BSpline.design_matrix(np.asarray(x, dtype=float), st["knots"], 3,
                                                  extrapolate=True).toarray()
            return B @ st["Z"]
        if kind is TermKind.MRF:
            return _indicator(x, st["levels"], self.spec.covariate, DisconnectedRegion) @ st["Z"]
        return _indicator(x, st["levels"], self.spec.covariate, UnknownLevel)


def _as_str(x):
    return np.asarray([str(v) for v in np.asarray(x).ravel()])


def _indicator(x, levels, name, err):
    xs = _as_str(x)
    idx = {lv: i for i, lv in enumerate(levels)}
    unknown = sorted(set(xs) - set(idx))
    if unknown:
        raise err(f"{name}: value(s) {unknown[:5]} not among known levels")
    M = np.zeros((xs.size, len(levels)))
    M[np.arange(xs.size), [idx[v] for v in xs]] = 1.0
    return M


def _dummies(x, levels, name):
    return _indicator(x, levels, name, UnknownLevel)[:, 1:]


def _build_term(term: TermSpec, data, n: int, factors) -> BuiltTerm:
    kind = term.kind
    if kind is TermKind.INTERCEPT:
        return BuiltTerm(term, ["(Intercept)"])
    x = _column(data, term.covariate)
    if x.shape[0] != n:
        raise ValueError(f"covariate {term.covariate!r} has {x.shape[0]} rows, expected {n}")
    if kind is TermKind.LINEAR:
        if term.covariate in factors:
            levels = sorted(set(_as_str(x)))
            if len(levels) < 2:
                raise ValueError(f"factor {term.covariate!r} has fewer than two observed levels")
            return BuiltTerm(term, [f"{term.covariate}[{lv}]" for lv in levels[1:]],
                             state={"levels": levels})
        return BuiltTerm(term, [term.covariate])
    if kind is TermKind.SPLINE:
        xf = np.asarray(x, dtype=float)
        lo, hi = float(np.min(xf)), float(np.max(xf))
        if not hi > lo:
            raise ValueError(f"spline covariate {term.covariate!r} is constant")
        K = term.basis_dim
        h = (hi - lo) / (K - 3)
        knots = np.linspace(lo - 3 * h, hi + 3 * h, K + 4)
        B = interpolate.BSpline.design_matrix(xf, knots, 3, extrapolate=True).toarray()
        Z = _centring_basis(B.sum(axis=0))
        S = difference_penalty(K, term.penalty_order)
        names = [f"{term.label}.{j + 1}" for j in range(K - 1)]
        return BuiltTerm(term, names, Z.T @ S @ Z, S, {"knots": knots, "Z": Z})
    if kind is TermKind.MRF:
        edges = read_adjacency(term.adjacency)
        regions = sorted({r for e in edges for r in e})
        present = set(_as_str(x))
        missing = sorted(present - set(regions))
        if missing:
            raise DisconnectedRegion(
                f"{term.covariate}: region(s) {missing[:5]} absent from the adjacency")
        L = laplacian(regions, edges)
        M = _indicator(x, regions, term.covariate, DisconnectedRegion)
        Z = _centring_basis(M.sum(axis=0))
        names = [f"{term.label}.{j + 1}" for j in range(len(regions) - 1)]
        return BuiltTerm(term, names, Z.T @ L @ Z, L,
                         {"levels": regions, "Z": Z})
    levels = sorted(set(_as_str(x)))
    names = [f"{term.label}[{lv}]" for lv in levels]
    eye = np.eye(len(levels))
    return BuiltTerm(term, names, eye, eye, {"levels": levels})


@dataclass
class ParamDesign:
    """Design of one distributional parameter."""

    X: np.ndarray
    terms: list

    @property
    def names(self):
        return [nm for t in self.terms for nm in t.names]

    def new_X(self, data, n):
        if not self.terms:
            return np.zeros((n, 0))
        return np.hstack([t.basis(data, n) for t in self.terms])


@dataclass
class PenaltyBlock:
    param: str
    label: str
    index: slice       # global coefficient slice
    S: np.ndarray
    raw_null_dim: int  # null space dimension before centring


@dataclass
class DesignSet:
    """Per-parameter designs, coefficient partition and penalty blocks.

    Coefficients are ordered ``theta_star`` (R entries), then the blocks of
    ``mu1``, ``mu2``, ``sigma2`` and ``gamma``.
    """

    spec: ModelSpec
    y1: np.ndarray
    y2: np.ndarray
    n_categories: int
    params: dict
    slices: dict
    penalties: list

    @property
    def n(self) -> int:
        return self.y1.size

    @property
    def n_coef(self) -> int:
        return self.slices["gamma"].stop

    @property
    def n_cut(self) -> int:
        return self.n_categories - 1

    @property
    def n_lambda(self) -> int:
        return len(self.penalties)

    def X(self, param) -> np.ndarray:
        return self.params[param].X

    def coef_names(self) -> list[str]:
        names = [f"theta*{r + 1}" for r in range(self.n_cut)]
        for p in PARAMS:
            names += [f"{p}:{nm}" for nm in self.params[p].names]
        return names

    def penalty_labels(self) -> list[str]:
        return [f"{b.param}:{b.label}" for b in self.penalties]

    def assemble_penalty(self, lam) -> np.ndarray:
        """Block-diagonal penalty ``S_lambda``."""
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        if lam.size != self.n_lambda:
            raise ValueError(f"expected {self.n_lambda} smoothing parameters, got {lam.size}")
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise NegativeLambda("smoothing parameters must be finite and nonnegative")
        S = np.zeros((self.n_coef, self.n_coef))
        for lj, b in zip(lam, self.penalties):
            S[b.index, b.index] += lj * b.S
        return S

    def eta(self, beta, param, X=None) -> np.ndarray:
        X = self.X(param) if X is None else X
        b = np.asarray(beta)[self.slices[param]]
        if X.shape[1] == 0:
            return np.zeros(X.shape[0])
        return X @ b

    def take(self, rows) -> "DesignSet":
        """Row subset sharing the same basis construction."""
        rows = np.asarray(rows)
        params = {p: ParamDesign(d.X[rows], d.terms) for p, d in self.params.items()}
        return DesignSet(self.spec, self.y1[rows], self.y2[rows], self.n_categories,
                         params, self.slices, self.penalties)

    def new_design(self, data) -> dict:
        """Design matrices for new rows, using the training transforms."""
        n = len(next(iter(data.values()))) if isinstance(data, dict) else len(data)
        return {p: d.new_X(data, n) for p, d in self.params.items()}

    def with_responses(self, y1, y2) -> "DesignSet":
        return DesignSet(self.spec, np.asarray(y1, dtype=int), np.asarray(y2, dtype=float),
                         self.n_categories, self.params, self.slices, self.penalties)

    def coefficient_block(self, beta, param):
        return np.asarray(beta)[self.slices[param]]

    def without_gamma(self) -> "DesignSet":
        """Design of the independence model (drops the dependence predictor)."""
        spec = replace(self.spec, copula=None)
        return build_from_parts(spec, self.y1, self.y2, self.n_categories,
                                {p: d for p, d in self.params.items() if p != "gamma"})


def build_from_parts(spec, y1, y2, n_categories, params) -> DesignSet:
    params = dict(params)
    n = y1.size
    if "gamma" not in params or spec.copula is None:
        params["gamma"] = ParamDesign(np.zeros((n, 0)), [])
    slices = {}
    pos = n_categories - 1
    penalties = []
    for p in PARAMS:
        d = params[p]
        slices[p] = slice(pos, pos + d.X.shape[1])
        col = pos
        for t in d.terms:
            if t.penalty is not None:
                null = t.spec.penalty_order if t.spec.kind is TermKind.SPLINE else (
                    1 if t.spec.kind is TermKind.MRF else 0)
                penalties.append(PenaltyBlock(p, t.spec.label, slice(col, col + t.n_cols),
                                              t.penalty, null))
            col += t.n_cols
        pos += d.X.shape[1]
    return DesignSet(spec, y1, y2, n_categories, params, slices, penalties)


def build_design(spec: ModelSpec, data, *, n_categories: int | None = None) -> DesignSet:
    """Build the design of ``spec`` on ``data`` (a DataFrame or mapping of columns).

    Raises
    ------
    MissingCovariate
        When a response or covariate column is absent.
    DisconnectedRegion
        When a region in the data is absent from an MRF adjacency.
    EmptyCategory
        When an ordinal level has no observations.

    Warns
    -----
    RankDeficiency
        When the unpenalized columns of a predictor are collinear.
    """
    y1 = _column(data, spec.response1)
    y2 = np.asarray(_column(data, spec.response2), dtype=float)
    K = check_categories(y1, n_categories)
    y1 = np.asarray(y1).astype(int)
    n = y1.size
    params = {}
    for p in PARAMS:
        terms = [_build_term(t, data, n, spec.factors) for t in spec.terms(p)]
        X = np.hstack([t.basis(data, n) for t in terms]) if terms else np.zeros((n, 0))
        params[p] = ParamDesign(X, terms)
        unpen = [t.basis(data, n) for t in terms if t.penalty is None]
        if p == "mu1":
            unpen.append(np.ones((n, 1)))  # cut points act as intercept
        if unpen:
            U = np.hstack(unpen)
            if np.linalg.matrix_rank(U) < U.shape[1]:
                warnings.warn(f"{p}: unpenalized columns are collinear", RankDeficiency,
                              stacklevel=2)
    return build_from_parts(spec, y1, y2, K, params)
