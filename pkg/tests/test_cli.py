import csv
import json
import subprocess
import sys
import time

import numpy as np
import pytest

from smartdtr.cli import check_plotdata, main
from smartdtr.data import TrialDataset, write_csv
from smartdtr.simulation import Dgp1Config, Dgp2StyleConfig, dgp1_sample, dgp2_style_sample

REFERENCE_TRUTHS = [0.6061, 0.8634, 0.6060, 0.8517, 0.6420, 0.8777, 0.6421, 0.8660]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _dump(tmp_path, name, doc):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


@pytest.fixture(scope="module")
def dgp1_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("fixture") / "dgp1.csv"
    write_csv(dgp1_sample(Dgp1Config(n=1692, seed=7)), path)
    return path


@pytest.fixture(scope="module")
def adaptr_csv(tmp_path_factory):
    data = dgp2_style_sample(Dgp2StyleConfig(n=1809, seed=21))
    frame = data.frame.copy()
    frame.loc[np.random.default_rng(1).choice(1809, 117, replace=False), "y"] = np.nan
    path = tmp_path_factory.mktemp("fixture") / "adaptr.csv"
    write_csv(TrialDataset(data.schema, frame), path)
    return path


def run(argv):
    return main([str(a) for a in argv])


class TestAnalyze:
    def test_tmle_eight_rows_in_unit_interval(self, tmp_path, dgp1_csv):
        cfg = _dump(tmp_path, "c.json", {
            "data": {"path": str(dgp1_csv)}, "design": "dgp1", "seed": 3,
            "arms": [{"name": "tmle", "estimator": "tmle", "g_source": "modeled"}],
            "inference": {"seed": 1, "mc_draws": 20000}})
        out = tmp_path / "out"
        assert run(["--quiet", "--out", out, "analyze", cfg]) == 0
        rows = _rows(out / "values.csv")
        assert len(rows) == 8
        assert all(0 <= float(r["estimate"]) <= 1 for r in rows)
        assert all(float(r["sim_upper"]) - float(r["sim_lower"]) > float(r["ind_upper"]) - float(r["ind_lower"])
                   for r in rows)
        assert check_plotdata(out)
        diag = json.loads((out / "diagnostics.json").read_text())
        assert diag["n_complete"] == 1692
        assert "warnings" in diag

    def test_saturated_arms_agree(self, tmp_path, dgp1_csv):
        cfg = _dump(tmp_path, "c.json", {
            "data": {"path": str(dgp1_csv)}, "design": "dgp1",
            "arms": [{"name": "ipw", "estimator": "ipw_saturated", "stabilized": True},
                     {"name": "gcomp", "estimator": "gcomp", "adjustment": "minimal", "learner": "saturated"},
                     {"name": "tmle", "estimator": "tmle", "adjustment": "minimal", "learner": "saturated",
                      "g_source": "saturated", "g_adjustment": "minimal"}],
            "inference": {"simultaneous": False}})
        out = tmp_path / "out"
        assert run(["--quiet", "--out", out, "analyze", cfg]) == 0
        rows = _rows(out / "values.csv")
        est = {}
        for r in rows:
            est.setdefault(r["estimator"], []).append(float(r["estimate"]))
        np.testing.assert_allclose(est["gcomp"], est["ipw"], atol=1e-8)
        np.testing.assert_allclose(est["tmle"], est["ipw"], atol=1e-8)
        assert all(r["variance"] == "N/A" for r in rows if r["estimator"] == "gcomp")

    def test_adaptr_contrasts(self, tmp_path, adaptr_csv):
        pairs = [["8", "1"], ["14", "1"], ["2", "3"], ["5", "6"], ["10", "11"]]
        cfg = _dump(tmp_path, "c.json", {
            "data": {"path": str(adaptr_csv)}, "design": "adaptr", "seed": 5,
            "arms": [{"name": "ipw_g0", "estimator": "ipw_known"},
                     {"name": "tmle", "estimator": "tmle", "adjustment": "minimal", "learner": "glm",
                      "g_source": "known"}],
            "contrasts": pairs, "inference": {"seed": 2, "mc_draws": 20000}})
        out = tmp_path / "out"
        assert run(["--quiet", "--out", out, "analyze", cfg]) == 0
        rows = _rows(out / "contrasts.csv")
        assert len(rows) == 5 * 2
        assert all(float(r["q_critical"]) > 1.96 for r in rows)
        values = _rows(out / "values.csv")
        assert len(values) == 15 * 2
        diag = json.loads((out / "diagnostics.json").read_text())
        assert diag["n_records"] == 1809 and diag["n_dropped_missing_outcome"] == 117

    def test_error_report_and_no_partial_output(self, tmp_path, dgp1_csv, capsys):
        cfg = _dump(tmp_path, "c.json", {"data": {"path": str(dgp1_csv)}, "design": "dgp1", "arms": []})
        out = tmp_path / "out"
        assert run(["--out", out, "analyze", cfg]) == 1
        report = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert report["status"] == "error" and "arm" in report["message"]
        assert not out.exists()

    def test_estimation_failure_leaves_nothing(self, tmp_path, dgp1_csv, capsys):
        cfg = _dump(tmp_path, "c.json", {
            "data": {"path": str(dgp1_csv)}, "design": "dgp1",
            "arms": [{"name": "ok", "estimator": "ipw_known"},
                     {"name": "bad", "estimator": "gcomp", "adjustment": "full", "learner": "saturated"}],
            "inference": {"simultaneous": False}})
        out = tmp_path / "out"
        assert run(["--out", out, "analyze", cfg]) == 1
        assert "saturated" in json.loads(capsys.readouterr().err.strip().splitlines()[-1])["message"]
        assert not (out / "values.csv").exists()

    def test_seed_required(self, tmp_path, dgp1_csv, capsys):
        cfg = _dump(tmp_path, "c.json", {"data": {"path": str(dgp1_csv)}, "design": "dgp1",
                                         "arms": [{"estimator": "ipw_known"}]})
        assert run(["--out", tmp_path / "o", "analyze", cfg]) == 1
        assert "inference.seed" in capsys.readouterr().err

    def test_unknown_field(self, tmp_path, dgp1_csv, capsys):
        cfg = _dump(tmp_path, "c.json", {"data": {"path": str(dgp1_csv)}, "design": "dgp1",
                                         "arms": [{"estimator": "ipw_known"}], "colour": "red"})
        assert run(["--out", tmp_path / "o", "analyze", cfg]) == 1
        assert "colour" in capsys.readouterr().err

    def test_explicit_regimes(self, tmp_path, dgp1_csv):
        cfg = _dump(tmp_path, "c.json", {
            "data": {"path": str(dgp1_csv)}, "design": "dgp1", "regimes": ["1", "6"],
            "arms": [{"estimator": "ipw_known"}], "inference": {"simultaneous": False}})
        out = tmp_path / "out"
        assert run(["--quiet", "--out", out, "analyze", cfg]) == 0
        assert [r["regime"] for r in _rows(out / "values.csv")] == ["1", "6"]


def _grid(tmp_path, **kw):
    doc = {"dgp": {"name": "dgp1", "n": 1692}, "replicates": 10, "master_seed": 3, "truths": REFERENCE_TRUTHS,
           "arms": [{"name": "ipw_g0", "estimator": "ipw_known"},
                    {"name": "ipw_gn_full", "estimator": "ipw_adjusted", "g_adjustment": "full"},
                    {"name": "gcomp_full", "estimator": "gcomp", "adjustment": "full", "folds": 5},
                    {"name": "tmle_full", "estimator": "tmle", "adjustment": "full", "g_source": "modeled",
                     "folds": 5}]}
    doc.update(kw)
    return _dump(tmp_path, "grid.json", doc)


class TestSimulate:
    def test_smoke_grid(self, tmp_path):
        out = tmp_path / "out"
        t0 = time.perf_counter()
        assert run(["--quiet", "--out", out, "simulate", _grid(tmp_path)]) == 0
        assert time.perf_counter() - t0 < 120
        rows = _rows(out / "metrics.csv")
        assert len(rows) == 8 * 4
        assert check_plotdata(out)
        summary = json.loads((out / "run.json").read_text())
        assert summary["failures"] == [] and summary["replicates"] == 10

    def test_zero_replicates(self, tmp_path, capsys):
        assert run(["--out", tmp_path / "o", "simulate", _grid(tmp_path, replicates=0)]) == 1
        assert "replicates" in capsys.readouterr().err

    def test_repeatable(self, tmp_path):
        g = _grid(tmp_path, replicates=3)
        assert run(["--quiet", "--out", tmp_path / "a", "simulate", g]) == 0
        assert run(["--quiet", "--out", tmp_path / "b", "simulate", g]) == 0
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


class TestTruths:
    def test_small_mc(self, tmp_path):
        dgp = _dump(tmp_path, "dgp.json", {"name": "dgp1"})
        out = tmp_path / "out"
        assert run(["--quiet", "--out", out, "truths", dgp, "--mc-size", 1000, "--seed", 1]) == 0
        doc = json.loads((out / "truths.json").read_text())
        assert len(doc["truths"]) == 8
        assert all(r["se"] > 0.001 for r in doc["truths"])

    def test_same_seed_identical(self, tmp_path):
        dgp = _dump(tmp_path, "dgp.json", {"name": "dgp2_style"})
        for d in ("a", "b"):
            assert run(["--quiet", "--out", tmp_path / d, "truths", dgp, "--mc-size", 5000, "--seed", 4]) == 0
        for f in ("truths.json", "truths.csv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_invalid_config(self, tmp_path, capsys):
        dgp = _dump(tmp_path, "dgp.json", {"name": "dgp9"})
        assert run(["--out", tmp_path / "o", "truths", dgp, "--mc-size", 10, "--seed", 1]) == 1
        assert "dgp9" in capsys.readouterr().err


def test_usage_error_exit_code():
    proc = subprocess.run([sys.executable, "-m", "smartdtr", "frobnicate"], capture_output=True)
    assert proc.returncode == 2


def test_missing_config_file(tmp_path, capsys):
    assert run(["--out", tmp_path, "analyze", tmp_path / "nope.json"]) == 1
    assert "not found" in capsys.readouterr().err
