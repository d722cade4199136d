"""Plain-text model configuration.

Example::

    [data]
    path = train.csv
    response1 = educ
    response2 = income
    factors = urban

    [model]
    margin = lognormal
    link = probit
    copula = gaussian

    [param.mu1]
    linear urban
    spline age dim=10 order=2
    mrf prov adj=prov.adj

    [param.mu2]
    intercept
    linear urban
    random cluster

    [param.sigma2]
    intercept

    [param.gamma]
    intercept

    [optimizer]
    tol = 1e-7
    max_outer_iters = 100

    [run]
    seed = 1

    [select]
    copulas = gaussian, frank, clayton, gumbel, joe180, independence
    links = probit, logit

Relative paths are resolved against the directory of the configuration file.
Sections ``param.sigma2`` and ``param.gamma`` default to an intercept only.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, replace

from .copulas import as_family
from .estimator import FitOptions
from .model import PARAMS, ModelSpec, TermKind, TermSpec, intercept


class ConfigError(ValueError):
    """Configuration problem anchored to a line and field."""

    def __init__(self, message, line=None, field_name=None, source=None):
        self.line = line
        self.field = field_name
        self.source = source
        where = []
        if source:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        if field_name:
            where.append(f"field '{field_name}'")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


_NUMERIC_OPTIONS = {"max_outer_iters": int, "max_inner_iters": int, "tol": float,
                    "initial_radius": float, "lambda_init": float, "pd_floor": float,
                    "grad_tol": float, "max_radius": float}

DEFAULT_COPULAS = ("gaussian", "frank", "clayton", "gumbel", "joe180", "independence")


@dataclass(frozen=True)
class ModelConfig:
    spec: ModelSpec
    data_path: str | None = None
    options: FitOptions = FitOptions()
    seed: int = 0
    select_copulas: tuple = DEFAULT_COPULAS
    select_links: tuple = ()
    base_dir: str = "."

    def resolve(self, path):
        if path is None:
            return None
        return path if os.path.isabs(path) else os.path.normpath(os.path.join(self.base_dir, path))


def _parse_copula(value, line, source=None, field_name="copula"):
    if value.strip().lower() in ("independence", "none", "indep"):
        return None
    try:
        return as_family(value)
    except ValueError as exc:
        raise ConfigError(str(exc), line, field_name, source) from None


def _parse_term(text, line, param, base_dir):
    parts = text.split()
    kind_s = parts[0].lower()
    try:
        kind = TermKind(kind_s)
    except ValueError:
        raise ConfigError(f"unknown term type {parts[0]!r}; expected one of "
                          f"{[k.value for k in TermKind]}", line, f"param.{param}") from None
    kw = {}
    positional = []
    for tok in parts[1:]:
        if "=" in tok:
            k, v = tok.split("=", 1)
            kw[k.strip().lower()] = v.strip()
        else:
            positional.append(tok)
    if kind is TermKind.INTERCEPT:
        if positional or kw:
            raise ConfigError("intercept takes no arguments", line, f"param.{param}")
        return intercept()
    if len(positional) != 1:
        raise ConfigError(f"{kind.value} needs exactly one covariate", line, f"param.{param}")
    args = {"kind": kind, "covariate": positional[0]}
    allowed = {TermKind.SPLINE: {"dim", "order"}, TermKind.MRF: {"adj"}}.get(kind, set())
    for k, v in kw.items():
        if k not in allowed:
            raise ConfigError(f"option {k!r} not valid for {kind.value}", line, f"param.{param}")
        if k in ("dim", "order"):
            try:
                args["basis_dim" if k == "dim" else "penalty_order"] = int(v)
            except ValueError:
                raise ConfigError(f"{k} must be an integer, got {v!r}", line, k) from None
        elif k == "adj":
            args["adjacency"] = v if os.path.isabs(v) else os.path.normpath(
                os.path.join(base_dir, v))
    if kind is TermKind.MRF and "adjacency" not in args:
        raise ConfigError("mrf term needs adj=<edge list file>", line, f"param.{param}")
    try:
        return TermSpec(**args)
    except ValueError as exc:
        raise ConfigError(str(exc), line, f"param.{param}") from None


def parse_config(text: str, base_dir: str = ".", source=None) -> ModelConfig:
    """Parse configuration text.

    Raises
    ------
    ConfigError
        With the offending line number and field.
    """
    sections: dict[str, list] = {}
    current = None
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError("unterminated section header", lineno, source=source)
            current = line[1:-1].strip().lower()
            valid = {"data", "model", "optimizer", "run", "select"} | {f"param.{p}" for p in PARAMS}
            if current not in valid:
                raise ConfigError(f"unknown section [{current}]", lineno, source=source)
            if current in seen:
                raise ConfigError(f"duplicate section [{current}] (first at line {seen[current]})",
                                  lineno, source=source)
            seen[current] = lineno
            sections[current] = []
            continue
        if current is None:
            raise ConfigError("content before the first section", lineno, source=source)
        sections[current].append((lineno, line))

    def kv(section):
        out = {}
        for lineno, line in sections.get(section, []):
            if "=" not in line:
                raise ConfigError("expected 'key = value'", lineno, section, source)
            k, v = (s.strip() for s in line.split("=", 1))
            out[k.lower()] = (v, lineno)
        return out

    data = kv("data")
    for key in data:
        if key not in ("path", "response1", "response2", "factors"):
            raise ConfigError(f"unknown key {key!r}", data[key][1], key, source)
    for req in ("response1", "response2"):
        if req not in data:
            raise ConfigError(f"[data] needs '{req}'", seen.get("data"), req, source)
    factors = tuple(f.strip() for f in data["factors"][0].split(",") if f.strip()) \
        if "factors" in data else ()

    model = kv("model")
    model_args = {}
    for key, (v, ln) in model.items():
        if key == "margin":
            if v.lower() not in ("lognormal", "normal", "gamma"):
                raise ConfigError(f"unknown margin {v!r}", ln, "margin", source)
            model_args["margin"] = v.lower()
        elif key == "link":
            if v.lower() not in ("probit", "logit"):
                raise ConfigError(f"unknown link {v!r}", ln, "link", source)
            model_args["link"] = v.lower()
        elif key == "copula":
            model_args["copula"] = _parse_copula(v, ln, source)
        else:
            raise ConfigError(f"unknown key {key!r}", ln, key, source)

    params = {}
    for p in PARAMS:
        sec = f"param.{p}"
        if sec in sections:
            params[p] = tuple(_parse_term(line, ln, p, base_dir) for ln, line in sections[sec])
        elif p == "mu1":
            params[p] = ()
        else:
            params[p] = (intercept(),)
    try:
        spec = ModelSpec(data["response1"][0], data["response2"][0], factors=factors,
                         **params, **model_args)
    except ValueError as exc:
        raise ConfigError(str(exc), seen.get("param.mu1"), "param.mu1", source) from None

    opt = {}
    for key, (v, ln) in kv("optimizer").items():
        if key not in _NUMERIC_OPTIONS:
            raise ConfigError(f"unknown optimizer option {key!r}", ln, key, source)
        try:
            x = float(v)
            if _NUMERIC_OPTIONS[key] is int:
                if not x.is_integer():
                    raise ValueError
                x = int(x)
        except ValueError:
            raise ConfigError(f"invalid value {v!r}", ln, key, source) from None
        opt[key] = x
        if opt[key] <= 0:
            raise ConfigError("must be positive", ln, key, source)

    run = kv("run")
    seed = 0
    for key, (v, ln) in run.items():
        if key != "seed":
            raise ConfigError(f"unknown key {key!r}", ln, key, source)
        try:
            seed = int(v)
        except ValueError:
            raise ConfigError(f"seed must be an integer, got {v!r}", ln, "seed", source) from None

    sel = kv("select")
    cops, links = DEFAULT_COPULAS, ()
    for key, (v, ln) in sel.items():
        items = tuple(s.strip().lower() for s in v.split(",") if s.strip())
        if key == "copulas":
            for it in items:
                _parse_copula(it, ln, source, "copulas")
            cops = items
        elif key == "links":
            for it in items:
                if it not in ("probit", "logit"):
                    raise ConfigError(f"unknown link {it!r}", ln, "links", source)
            links = items
        else:
            raise ConfigError(f"unknown key {key!r}", ln, key, source)

    path = data["path"][0] if "path" in data else None
    if path is not None and not os.path.isabs(path):
        path = os.path.normpath(os.path.join(base_dir, path))
    return ModelConfig(spec, path, FitOptions(**opt), seed, cops, links, base_dir)


def load_config(path) -> ModelConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc.strerror}", source=path) from None
    return parse_config(text, os.path.dirname(os.path.abspath(path)), source=path)


def _term_line(t: TermSpec) -> str:
    if t.kind is TermKind.INTERCEPT:
        return "intercept"
    if t.kind is TermKind.SPLINE:
        return f"spline {t.covariate} dim={t.basis_dim} order={t.penalty_order}"
    if t.kind is TermKind.MRF:
        if not isinstance(t.adjacency, str):
            raise ValueError("only file-based adjacencies can be serialized")
        return f"mrf {t.covariate} adj={t.adjacency}"
    return f"{t.kind.value} {t.covariate}"


def format_config(cfg: ModelConfig) -> str:
    """Serialize a configuration; ``parse_config`` of the result gives it back."""
    s = cfg.spec
    lines = ["[data]"]
    if cfg.data_path:
        lines.append(f"path = {cfg.data_path}")
    lines += [f"response1 = {s.response1}", f"response2 = {s.response2}"]
    if s.factors:
        lines.append("factors = " + ", ".join(s.factors))
    lines += ["", "[model]", f"margin = {s.margin.value}", f"link = {s.link.value}",
              f"copula = {s.copula_name}"]
    for p in PARAMS:
        terms = getattr(s, p)
        lines += ["", f"[param.{p}]"] + [_term_line(t) for t in terms]
    lines += ["", "[optimizer]"]
    for name in _NUMERIC_OPTIONS:
        lines.append(f"{name} = {getattr(cfg.options, name)!r}")
    lines += ["", "[run]", f"seed = {cfg.seed}", "", "[select]",
              "copulas = " + ", ".join(cfg.select_copulas)]
    if cfg.select_links:
        lines.append("links = " + ", ".join(cfg.select_links))
    return "\n".join(lines) + "\n"


def with_overrides(cfg: ModelConfig, *, seed=None, tol=None, max_iter=None) -> ModelConfig:
    opts = cfg.options
    if tol is not None:
        opts = replace(opts, tol=float(tol))
    if max_iter is not None:
        opts = replace(opts, max_outer_iters=int(max_iter))
    return replace(cfg, options=opts, seed=cfg.seed if seed is None else int(seed))
