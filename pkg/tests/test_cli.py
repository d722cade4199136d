import io
import json
import math

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from ordcop.cli import EXIT_INPUT, EXIT_OK, main
from ordcop.simstudy import Scenario, generate

CONFIG = """\
[data]
path = d.csv
response1 = y1
response2 = y2

[model]
margin = lognormal
copula = gaussian

[param.mu1]
linear x1
spline nu1 dim=8

[param.mu2]
intercept
linear x1
linear x2
spline nu1 dim=8

[param.sigma2]
intercept
linear x3

[param.gamma]
intercept
spline nu2 dim=8

[run]
seed = 4

[select]
copulas = gaussian, frank, independence
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    generate(Scenario(1), 0, n=500).to_csv(d / "d.csv", index=False)
    (d / "m.cfg").write_text(CONFIG)
    return d


@pytest.fixture(scope="module")
def fitted(workdir):
    out = workdir / "out"
    code = main(["fit", "--config", str(workdir / "m.cfg"), "--out-dir", str(out)])
    return code, out


def test_fit_outputs(fitted):
    code, out = fitted
    assert code == EXIT_OK
    s = json.loads((out / "fit.json").read_text())
    assert s["converged"] is True
    assert_allclose(s["bic"] - s["aic"], (math.log(s["n"]) - 2) * s["edf"], atol=1e-6)
    names = [c["name"] for c in s["coefficients"]]
    assert "mu1:x1" in names and "gamma:(Intercept)" in names
    assert all(c["se"] > 0 for c in s["coefficients"])
    assert (out / "fit.bin").exists()


def test_fit_is_byte_identical(workdir, fitted):
    _, out = fitted
    out2 = workdir / "out2"
    assert main(["fit", "--config", str(workdir / "m.cfg"), "--out-dir", str(out2)]) == EXIT_OK
    assert (out / "fit.json").read_bytes() == (out2 / "fit.json").read_bytes()


def test_missing_covariate(workdir, capsys, caplog):
    (workdir / "bad.cfg").write_text(CONFIG.replace("linear x3", "linear income_pc"))
    code = main(["fit", "--config", str(workdir / "bad.cfg"), "--out-dir", str(workdir / "bad")])
    assert code == EXIT_INPUT
    assert "income_pc" in caplog.text
    assert capsys.readouterr().out == ""


def test_config_error_exit(workdir, caplog):
    (workdir / "broken.cfg").write_text(CONFIG.replace("copula = gaussian", "copula = tawn"))
    assert main(["fit", "--config", str(workdir / "broken.cfg")]) == EXIT_INPUT
    assert "broken.cfg, line 8, field 'copula'" in caplog.text


def test_nonconvergence_exit(workdir):
    code = main(["fit", "--config", str(workdir / "m.cfg"), "--out-dir", str(workdir / "nc"),
                 "--max-iter", "1"])
    assert code == 2
    s = json.loads((workdir / "nc" / "fit.json").read_text())
    assert s["converged"] is False and s["warnings"]


def test_predict_reproduces_fit(fitted):
    from ordcop.likelihood import linear_predictors
    from ordcop.persist import load_fit

    _, out = fitted
    assert main(["predict", "--out-dir", str(out), "--format", "both"]) == EXIT_OK
    pred = pd.read_csv(out / "predictions.csv", float_precision="round_trip")
    res, _, _ = load_fit(str(out / "fit.bin"))
    eta = linear_predictors(res.beta, res.design)
    for k in ("mu1", "mu2", "sigma2", "gamma"):
        assert np.array_equal(pred[f"eta_{k}"].to_numpy(), eta[k])
    recs = json.loads((out / "predictions.json").read_text())
    assert len(recs) == 500


def test_residuals_seeded(fitted):
    _, out = fitted
    assert main(["residuals", "--out-dir", str(out)]) == EXIT_OK
    a = (out / "residuals.csv").read_bytes()
    assert main(["residuals", "--out-dir", str(out)]) == EXIT_OK
    assert a == (out / "residuals.csv").read_bytes()
    bands = pd.read_csv(out / "chi2_bands.csv")
    assert list(bands.columns) == ["theoretical", "lower", "upper", "observed"]
    assert len(bands) == 500


def test_contour_and_classify(fitted):
    _, out = fitted
    assert main(["contour", "--out-dir", str(out), "--row", "2", "--grid", "30"]) == EXIT_OK
    assert len(pd.read_csv(out / "contour.csv")) == 3 * 30
    assert main(["classify", "--out-dir", str(out), "--educ-threshold", "1"]) == EXIT_OK
    c = json.loads((out / "classification.json").read_text())
    assert set(c) == {"both", "income", "education"}


def test_select(workdir, capsys):
    out = workdir / "sel"
    code = main(["select", "--config", str(workdir / "m.cfg"), "--out-dir", str(out)])
    assert code == EXIT_OK
    table = pd.read_csv(out / "selection.csv")
    assert set(table["model"]) == {"gaussian", "frank", "independence"}
    ok = table[~table["eliminated"]]
    assert ok["aic"].is_monotonic_increasing
    assert table["model"].iloc[0] == "gaussian"
    printed = pd.read_csv(io.StringIO(capsys.readouterr().out))
    assert list(printed["model"]) == list(table["model"])


def test_select_threads_identical(workdir, capsys):
    a, b = workdir / "s1", workdir / "s2"
    cfg = str(workdir / "m.cfg")
    assert main(["select", "--config", cfg, "--out-dir", str(a), "--threads", "1"]) == EXIT_OK
    assert main(["select", "--config", cfg, "--out-dir", str(b), "--threads", "3"]) == EXIT_OK
    assert (a / "selection.json").read_bytes() == (b / "selection.json").read_bytes()


def test_simulate(workdir):
    out = workdir / "sim"
    code = main(["simulate", "--scenario", "1", "--n", "300", "--reps", "2", "--out-dir", str(out)])
    assert code == EXIT_OK
    rep = json.loads((out / "simulation.json").read_text())
    assert len(rep["records"]) == 2
    assert (out / "smooth_grid.csv").exists()


def test_config_command(workdir, capsys):
    assert main(["config", "--config", str(workdir / "m.cfg")]) == EXIT_OK
    text = capsys.readouterr().out
    assert text.startswith("[data]") and "copula = gaussian" in text


def test_threads_env(monkeypatch):
    from ordcop.cli import ConfigError, _threads

    class A:
        threads = None
    monkeypatch.setenv("ORDCOP_THREADS", "4")
    assert _threads(A()) == 4
    monkeypatch.setenv("ORDCOP_THREADS", "many")
    with pytest.raises(ConfigError):
        _threads(A())
