import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from splicetail import cli

SMALL = ["--T", "25", "--I", "40"]


def run(argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def panel_csv(tmp_path_factory):
    d = tmp_path_factory.mktemp("panel")
    path = d / "p.csv"
    assert run(["simulate", "--dgp", 1, "--seed", 3, "--T", 60, "--out", path]) == 0
    return path


def test_simulate_is_byte_identical(tmp_path, monkeypatch):
    outs = []
    for sub in ("a", "b"):
        (tmp_path / sub).mkdir()
        monkeypatch.chdir(tmp_path / sub)
        assert run(["simulate", "--dgp", 1, "--seed", 7, *SMALL, "--out", "x.csv"]) == 0
        outs.append(((tmp_path / sub / "x.csv").read_bytes(), (tmp_path / sub / "x.json").read_bytes()))
    assert outs[0] == outs[1]


def test_simulate_defaults_and_sidecar(tmp_path):
    out = tmp_path / "d2.csv"
    assert run(["simulate", "--dgp", 2, "--seed", 1, "--contamination", 0.2, "--out", out]) == 0
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["entity", "time", "y", "x1"] and len(rows) == 10_001
    meta = json.loads((tmp_path / "d2.json").read_text())
    assert meta["schema_version"] == cli.SCHEMA_VERSION
    assert meta["spec"]["c"] == 0.2 and meta["spec"]["kind"] == "contaminated"
    assert meta["config"]["seed"] == 1


def test_simulate_requires_seed_and_writable_path(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        run(["simulate", "--out", tmp_path / "x.csv"])
    assert exc.value.code == 2
    assert run(["simulate", "--seed", 1, "--out", tmp_path / "missing" / "x.csv"]) == cli.EXIT_INPUT
    assert "does not exist" in capsys.readouterr().err


def test_fit_wmle_tau_zero_matches_mle(panel_csv, tmp_path):
    assert run(["fit", "--input", panel_csv, "--method", "mle", "--out", tmp_path / "m.json"]) == 0
    assert run(["fit", "--input", panel_csv, "--method", "wmle", "--tau", 0, "--out", tmp_path / "w.json"]) == 0
    m = json.loads((tmp_path / "m.json").read_text())
    w = json.loads((tmp_path / "w.json").read_text())
    np.testing.assert_allclose(m["theta_hat"], w["theta_hat"], atol=1e-6)
    assert m["vcv_kind"] == "hessian" and w["vcv_kind"] == "sandwich"
    assert w["tau"] == 0.0 and m["tau"] is None
    assert m["convergence"]["converged"] and m["adm"] is not None
    coef = m["coefficients"][0]
    assert set(coef) == {"name", "estimate", "se", "ci_lo", "ci_hi", "p_value", "stars"}
    assert coef["stars"] in ("", "*", "**")


def test_fit_pot_baseline(panel_csv, tmp_path):
    out = tmp_path / "pot.json"
    code = run(["fit", "--input", panel_csv, "--method", "pot", "--threshold-level", 0.95,
                "--threshold-kind", "unconditional", "--out", out])
    assert code == 0
    res = json.loads(out.read_text())
    assert res["model"] == "pot" and res["censoring"]["level"] == 0.95
    assert res["names"] == ["beta_sigma_0", "beta_sigma_1", "beta_xi_0", "beta_xi_1"]
    assert len(res["vcv"]) == 4


def test_fit_input_errors(panel_csv, tmp_path, capsys):
    assert run(["fit", "--input", panel_csv, "--method", "mle", "--covariates", "x7"]) == cli.EXIT_INPUT
    assert "x7" in capsys.readouterr().err
    bad = tmp_path / "bad.csv"
    bad.write_text("entity,time,y,x1\n1,1,0.1,0.2\n2,1,0.3\n")
    assert run(["fit", "--input", bad, "--method", "mle"]) == cli.EXIT_INPUT
    assert "row 3" in capsys.readouterr().err
    assert run(["fit", "--input", tmp_path / "nope.csv", "--method", "mle"]) == cli.EXIT_INPUT


def test_fit_non_convergence_exit_code(panel_csv, tmp_path, monkeypatch):
    real = cli.fit_splice

    def stalled(*a, **kw):
        fit = real(*a, **kw)
        fit.converged = False
        return fit

    monkeypatch.setattr(cli, "fit_splice", stalled)
    out = tmp_path / "nc.json"
    assert run(["fit", "--input", panel_csv, "--method", "mle", "--out", out]) == cli.EXIT_CONVERGENCE
    assert json.loads(out.read_text())["convergence"]["converged"] is False


def test_select_tau_outputs(panel_csv, tmp_path):
    out, curve = tmp_path / "sel.json", tmp_path / "curve.csv"
    code = run(["select-tau", "--input", panel_csv, "--grid-min", 0.1, "--grid-max", 0.3,
                "--grid-points", 3, "--out", out, "--curve", curve])
    assert code == 0
    sel = json.loads(out.read_text())
    assert sel["tau_opt"] in sel["grid"] and len(sel["grid"]) == 3
    rows = list(csv.DictReader(open(curve)))
    assert len(rows) == 3 and rows[0].keys() == {"tau", "adm"}


def test_select_tau_default_grid():
    p = cli.build_parser().parse_args(["select-tau", "--input", "x.csv"])
    assert (p.grid_min, p.grid_max, p.grid_points) == (0.05, 0.5, 20)
    assert p.censor_kind == "unconditional"


def test_mc_small_campaign(tmp_path):
    code = run(["mc", "--dgp", 1, "--seed", 2, "--B", 2, *SMALL, "--tau", 0.2,
                "--estimators", "wmle,mle,pot90", "--out-dir", tmp_path, "--raw"])
    assert code == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["schema_version"] == cli.SCHEMA_VERSION and rep["B"] == 2
    for name in ("wmle", "mle", "pot90"):
        assert rep["table"][name]["seconds"] > 0
    cov = list(csv.DictReader(open(tmp_path / "coverage.csv")))
    bias = list(csv.DictReader(open(tmp_path / "bias.csv")))
    assert len(cov) == len(bias) == 6
    assert set(cov[0]) == {"estimator", "coefficient", "truth", "coverage", "median_length"}
    timing = list(csv.DictReader(open(tmp_path / "timing.csv")))
    assert [t["estimator"] for t in timing] == ["wmle", "mle", "pot90"]
    raw = list(csv.DictReader(open(tmp_path / "replicates.csv")))
    assert len(raw) == 2 * 3 * 2 and {"estimate", "ci_lo", "ci_hi", "inference_ok"} <= set(raw[0])


def test_mc_failure_threshold(tmp_path):
    code = run(["mc", "--dgp", 1, "--seed", 0, "--B", 2, "--T", 5, "--I", 40,
                "--estimators", "pot99", "--out-dir", tmp_path])
    assert code == cli.EXIT_CONVERGENCE


def test_mc_rejects_bad_estimator(tmp_path):
    assert run(["mc", "--seed", 0, "--B", 2, "--estimators", "foo", "--out-dir", tmp_path]) == cli.EXIT_INPUT


def test_validate_pareto(tmp_path, capsys):
    out = tmp_path / "v.json"
    args = ["validate", "pareto", "--seed", 1, "--n", 5000, "--runs", 40, "--tol", 0.5, "--out", out]
    assert run(args) == 0
    first = out.read_text()
    assert "PASS tau0_equals_mean_log" in capsys.readouterr().out
    assert run(args) == 0
    assert out.read_text() == first
    assert run(["validate", "pareto", "--seed", 1, "--n", 5000, "--runs", 40, "--tol", 0.0]) == cli.EXIT_VALIDATION
    assert "FAIL" in capsys.readouterr().out


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "splicetail.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for sub in ("simulate", "fit", "select-tau", "mc", "validate"):
        assert sub in r.stdout
