"""Serialisation of fitted models and JSON helpers.

``fit.bin`` is a NumPy ``.npz`` archive (no pickled objects) holding

* ``format``: the string ``"ordcop-fit"`` and ``version`` (currently 1);
* ``config``: the configuration text the model was fitted with;
* ``data_csv``: the training data as CSV text;
* ``adjacency_paths`` / ``adjacency_texts``: contents of MRF edge lists;
* numeric arrays ``beta``, ``lam``, ``H``, ``Hp``, ``V_bayes``, ``V_freq``,
  ``gradient_penalized`` and scalars ``loglik``, ``loglik_penalized``,
  ``edf``, ``aic``, ``bic``, ``converged``;
* ``trace_json`` and ``warnings_json``.

Loading rebuilds the design matrices from the configuration and data, so
predictions and residuals need no refit.
"""
from __future__ import annotations

import io
import json
import math
import os
import tempfile

import numpy as np
import pandas as pd

from .config import parse_config
from .estimator import FitResult
from .model import PARAMS, TermKind
from .predictor import build_design

FORMAT = "ordcop-fit"
VERSION = 1


class FitFileError(ValueError):
    pass


def _clean(obj):
    """Recursively convert numpy scalars/arrays and map NaN/inf to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(obj) -> str:
    """JSON text; floats use the shortest repr that round-trips exactly."""
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def write_text_atomic(path, text: str):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def fit_summary(fit: FitResult) -> dict:
    names = fit.coef_names
    se = fit.se
    return {
        "copula": fit.spec.copula_name,
        "margin": fit.spec.margin.value,
        "link": fit.spec.link.value,
        "n": fit.n,
        "converged": bool(fit.converged),
        "loglik": fit.loglik,
        "loglik_penalized": fit.loglik_penalized,
        "edf": fit.edf,
        "aic": fit.aic,
        "bic": fit.bic,
        "coefficients": [{"name": nm, "estimate": b, "se": s}
                         for nm, b, s in zip(names, fit.beta, se)],
        "lambda": [{"term": lbl, "value": v}
                   for lbl, v in zip(fit.design.penalty_labels(), fit.lam)],
        "term_edf": fit.term_edf(),
        "trace": fit.trace,
        "warnings": fit.warnings,
    }


def _adjacency_files(spec):
    files = []
    for p in PARAMS:
        for t in spec.terms(p):
            if t.kind is TermKind.MRF and isinstance(t.adjacency, str):
                files.append(t.adjacency)
    return files


def save_fit(path, fit: FitResult, config_text: str, data: pd.DataFrame):
    adj = _adjacency_files(fit.spec)
    texts = []
    for a in adj:
        with open(a) as fh:
            texts.append(fh.read())
    buf = io.BytesIO()
    np.savez(buf, format=np.array(FORMAT), version=np.array(VERSION),
             config=np.array(config_text), data_csv=np.array(data.to_csv(index=False)),
             adjacency_paths=np.array(adj, dtype=str), adjacency_texts=np.array(texts, dtype=str),
             beta=fit.beta, lam=fit.lam, H=fit.H, Hp=fit.Hp, V_bayes=fit.V_bayes,
             V_freq=fit.V_freq, gradient_penalized=fit.gradient_penalized,
             loglik=fit.loglik, loglik_penalized=fit.loglik_penalized, edf=fit.edf,
             aic=fit.aic, bic=fit.bic, converged=fit.converged,
             trace_json=np.array(json.dumps(_clean(fit.trace))),
             warnings_json=np.array(json.dumps(fit.warnings)))
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    with os.fdopen(fd, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def load_fit(path):
    """Load a fit saved by :func:`save_fit`.

    Returns
    -------
    (fit, config, data) : tuple
    """
    try:
        z = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise FitFileError(f"{path}: not a readable fit file ({exc})") from None
    with z:
        if "format" not in z or str(z["format"]) != FORMAT:
            raise FitFileError(f"{path}: not an ordcop fit file")
        version = int(z["version"])
        if version != VERSION:
            raise FitFileError(f"{path}: unsupported fit file version {version}")
        arrays = {k: z[k] for k in z.files}
    config_text = str(arrays["config"])
    tmpdir = None
    paths = [str(p) for p in arrays["adjacency_paths"]]
    texts = [str(t) for t in arrays["adjacency_texts"]]
    missing = [p for p in paths if not os.path.exists(p)]
    if missing:
        tmpdir = tempfile.mkdtemp(prefix="ordcop-adj-")
        for i, (p, t) in enumerate(zip(paths, texts)):
            if p in missing:
                newp = os.path.join(tmpdir, f"adj{i}.txt")
                with open(newp, "w") as fh:
                    fh.write(t)
                config_text = config_text.replace(f"adj={p}", f"adj={newp}")
    cfg = parse_config(config_text, base_dir=".")
    data = pd.read_csv(io.StringIO(str(arrays["data_csv"])))
    design = build_design(cfg.spec, data)
    fit = FitResult(design, arrays["beta"], arrays["lam"], float(arrays["loglik"]),
                    float(arrays["loglik_penalized"]), float(arrays["edf"]),
                    float(arrays["aic"]), float(arrays["bic"]), arrays["H"], arrays["Hp"],
                    arrays["V_bayes"], arrays["V_freq"], arrays["gradient_penalized"],
                    bool(arrays["converged"]), json.loads(str(arrays["trace_json"])),
                    json.loads(str(arrays["warnings_json"])), cfg.options)
    return fit, cfg, data
