"""Command-line interface.

Subcommands: ``fit``, ``select``, ``predict``, ``residuals``, ``classify``,
``contour`` and ``simulate``.  Files go to ``--out-dir``; logs go to stderr.

Exit codes: 0 success, 1 input or usage error, 2 fit finished without
convergence (partial results are still written).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from dataclasses import replace

import numpy as np
import pandas as pd

from . import __version__
from .config import ConfigError, format_config, load_config, with_overrides
from .copulas import as_family
from .estimator import FitOptions, fit
from .margins import EmptyCategory, SupportViolation
from .persist import FitFileError, dumps, fit_summary, load_fit, save_fit, write_text_atomic
from .predictor import DisconnectedRegion, MissingCovariate, UnknownLevel, build_design

log = logging.getLogger("ordcop")

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2
INPUT_ERRORS = (ConfigError, MissingCovariate, DisconnectedRegion, UnknownLevel, EmptyCategory,
                SupportViolation, FitFileError, FileNotFoundError, ValueError)


def _threads(args) -> int:
    if getattr(args, "threads", None) is not None:
        return max(1, args.threads)
    env = os.environ.get("ORDCOP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"ORDCOP_THREADS must be an integer, got {env!r}") from None
    return 1


def _read_csv(path) -> pd.DataFrame:
    if path is None:
        raise ConfigError("no data file given (set [data] path or pass --data)")
    try:
        return pd.read_csv(path)
    except FileNotFoundError:
        raise FileNotFoundError(f"data file not found: {path}") from None


def _load(args):
    cfg = load_config(args.config)
    cfg = with_overrides(cfg, seed=args.seed, tol=args.tol, max_iter=args.max_iter)
    data = _read_csv(args.data or cfg.data_path)
    return cfg, data


def _out(args, name):
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def _write_table(df: pd.DataFrame, path_base: str, fmt: str):
    if fmt in ("csv", "both"):
        write_text_atomic(path_base + ".csv", df.to_csv(index=False))
    if fmt in ("json", "both"):
        write_text_atomic(path_base + ".json", dumps(df.to_dict(orient="records")))


def _quiet_fit(*a, **kw):
    from threadpoolctl import threadpool_limits

    with threadpool_limits(1), warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fit(*a, **kw)


# ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    cfg, data = _load(args)
    log.info("fitting %s copula model on %d rows", cfg.spec.copula_name, len(data))
    res = _quiet_fit(cfg.spec, data, cfg.options)
    cfg_text = format_config(cfg)
    summary = fit_summary(res)
    write_text_atomic(_out(args, "fit.json"), dumps(summary))
    save_fit(_out(args, "fit.bin"), res, cfg_text, data)
    for w in res.warnings:
        log.warning("%s", w)
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def _candidate_fit(spec, data, options, label):
    try:
        res = _quiet_fit(spec, data, options)
        return {"model": label, "copula": spec.copula_name, "link": spec.link.value,
                "aic": res.aic, "bic": res.bic, "loglik": res.loglik, "edf": res.edf,
                "converged": bool(res.converged), "eliminated": not res.converged,
                "error": None if res.converged else "; ".join(res.warnings)}
    except Exception as exc:  # recorded per candidate
        return {"model": label, "copula": spec.copula_name, "link": spec.link.value,
                "aic": float("nan"), "bic": float("nan"), "loglik": float("nan"),
                "edf": float("nan"), "converged": False, "eliminated": True,
                "error": f"{type(exc).__name__}: {exc}"}


def selection_table(spec, data, options, copulas, links=(), n_jobs=1) -> pd.DataFrame:
    """Fit every (copula, link) candidate and sort by AIC, then BIC.

    Non-converged candidates are kept, flagged ``eliminated`` and placed last.
    """
    from joblib import Parallel, delayed

    links = tuple(links) or (spec.link.value,)
    design = build_design(spec, data)  # validates the data once
    del design
    cands = []
    for link in links:
        for c in copulas:
            cop = None if str(c).lower() in ("independence", "none") else as_family(c)
            s = spec.with_copula(cop).with_link(link)
            label = s.copula_name if len(links) == 1 else f"{s.copula_name}/{link}"
            cands.append((s, label))
    if n_jobs == 1:
        rows = [_candidate_fit(s, data, options, lbl) for s, lbl in cands]
    else:
        rows = Parallel(n_jobs=n_jobs)(delayed(_candidate_fit)(s, data, options, lbl)
                                       for s, lbl in cands)
    table = pd.DataFrame(rows)
    table["_rank"] = table["eliminated"].astype(int)
    table = table.sort_values(["_rank", "aic", "bic", "model"], kind="mergesort",
                              na_position="last").drop(columns="_rank").reset_index(drop=True)
    return table


def cmd_select(args) -> int:
    cfg, data = _load(args)
    copulas = tuple(args.copulas.split(",")) if args.copulas else cfg.select_copulas
    links = tuple(args.links.split(",")) if args.links else cfg.select_links
    table = selection_table(cfg.spec, data, cfg.options, copulas, links, _threads(args))
    write_text_atomic(_out(args, "selection.csv"), table.to_csv(index=False))
    write_text_atomic(_out(args, "selection.json"), dumps(table.to_dict(orient="records")))
    if not table["converged"].any():
        log.error("no candidate converged")
        return EXIT_NONCONVERGED
    sys.stdout.write(table[["model", "aic", "bic", "converged"]].to_csv(index=False))
    return EXIT_OK


def _fit_and_data(args):
    path = args.fit or os.path.join(args.out_dir, "fit.bin")
    res, cfg, train = load_fit(path)
    data = _read_csv(args.data) if args.data else train
    return res, cfg, data


def cmd_predict(args) -> int:
    from .inference import predict

    res, _, data = _fit_and_data(args)
    pred = predict(res, data)
    _write_table(pred, _out(args, "predictions"), args.format)
    return EXIT_OK


def cmd_residuals(args) -> int:
    from .inference import reference_bands, residuals

    res, cfg, data = _fit_and_data(args)
    seed = cfg.seed if args.seed is None else args.seed
    rs = residuals(res, data, seed=seed)
    _write_table(rs.frame(), _out(args, "residuals"), args.format)
    n = len(rs.q2)
    chi = reference_bands(n, args.n_rep, seed=seed, distribution="chi2")
    chi["observed"] = np.sort(rs.chi2)
    qq = reference_bands(n, args.n_rep, seed=seed, distribution="normal")
    qq["observed"] = np.sort(rs.q2)
    _write_table(chi, _out(args, "chi2_bands"), args.format)
    _write_table(qq, _out(args, "qq_bands"), args.format)
    return EXIT_OK


def cmd_classify(args) -> int:
    from .inference import classify_vulnerable

    res, _, data = _fit_and_data(args)
    out = {}
    for dim in ("both", "income", "education"):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            c = classify_vulnerable(res, data, args.educ_threshold, args.income_line,
                                    args.prob_threshold, dim)
        for w in caught:
            log.warning("%s: %s", dim, w.message)
        out[dim] = c.as_dict()
    write_text_atomic(_out(args, "classification.json"), dumps(out))
    return EXIT_OK


def cmd_contour(args) -> int:
    from .inference import contour_grid

    res, _, data = _fit_and_data(args)
    if not 0 <= args.row < len(data):
        raise ValueError(f"--row must be in 0..{len(data) - 1}")
    row = data.iloc[[args.row]].reset_index(drop=True)
    y = np.asarray(data[res.spec.response2], dtype=float)
    lo, hi = np.quantile(y, [0.01, 0.99])
    grid = np.linspace(lo, hi, args.grid)
    _write_table(contour_grid(res, row, grid), _out(args, "contour"), args.format)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .simstudy import GRID, Scenario, run_study, true_smooths

    seed = 0 if args.seed is None else args.seed
    opts = FitOptions()
    if args.tol is not None:
        opts = replace(opts, tol=args.tol)
    if args.max_iter is not None:
        opts = replace(opts, max_outer_iters=args.max_iter)
    sc = Scenario(args.scenario, n=args.n, n_rep=args.reps, seed=seed)
    report = run_study(sc, opts, n_jobs=_threads(args))
    write_text_atomic(_out(args, "simulation.json"), dumps(report))
    truth = true_smooths(sc, GRID)
    grid = pd.DataFrame({"x": GRID, **{f"true:{k}": v - v.mean() for k, v in truth.items()}})
    write_text_atomic(_out(args, "smooth_grid.csv"), grid.to_csv(index=False))
    return EXIT_OK


def cmd_config(args) -> int:
    cfg = load_config(args.config)
    sys.stdout.write(format_config(cfg))
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ordcop", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="model configuration file")
        sp.add_argument("--out-dir", default=".", help="directory for output files")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None,
                        help="parallel workers (default: $ORDCOP_THREADS or 1)")
        sp.add_argument("--tol", type=float, default=None)
        sp.add_argument("--max-iter", type=int, default=None)
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("fit", help="fit the configured model")
    common(sp)
    sp.add_argument("--data", help="data CSV (overrides the configuration)")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("select", help="compare copulas and links by AIC/BIC")
    common(sp)
    sp.add_argument("--data")
    sp.add_argument("--copulas", help="comma-separated list, may include 'independence'")
    sp.add_argument("--links", help="comma-separated list of links")
    sp.set_defaults(func=cmd_select)

    for name, func, helptext in (("predict", cmd_predict, "per-row predictions"),
                                 ("residuals", cmd_residuals, "quantile residuals"),
                                 ("classify", cmd_classify, "vulnerability classification"),
                                 ("contour", cmd_contour, "joint density grid for one row")):
        sp = sub.add_parser(name, help=helptext)
        common(sp, config=False)
        sp.add_argument("--fit", help="fit.bin (default: OUT_DIR/fit.bin)")
        sp.add_argument("--data", help="new data CSV (default: training data)")
        sp.add_argument("--format", choices=("csv", "json", "both"), default="csv")
        if name == "residuals":
            sp.add_argument("--n-rep", type=int, default=100)
        if name == "classify":
            sp.add_argument("--educ-threshold", type=int, required=True)
            sp.add_argument("--income-line", type=float, default=None)
            sp.add_argument("--prob-threshold", type=float, default=0.1)
        if name == "contour":
            sp.add_argument("--row", type=int, default=0)
            sp.add_argument("--grid", type=int, default=100)
        sp.set_defaults(func=func)

    sp = sub.add_parser("simulate", help="run the simulation study")
    common(sp, config=False)
    sp.add_argument("--scenario", type=int, choices=(1, 2, 3, 4), required=True)
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--reps", type=int, default=100)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("config", help="print the normalized configuration")
    sp.add_argument("--config", required=True)
    sp.set_defaults(func=cmd_config, verbose=False)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
