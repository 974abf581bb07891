import csv
import json
from pathlib import Path

import numpy as np
import pytest

from moodbench.cli import fmt_cell, main
from moodbench.dataset import read_features_csv

GOLDEN = Path(__file__).parent / "fixtures" / "golden"


def _cfg(tmp_path, name="cfg.json", **kw):
    base = {"countries": ["IT", "DK"], "n_users": 6, "reports_per_user": 10, "n_features": 5,
            "seed": 1}
    base.update(kw)
    p = tmp_path / name
    p.write_text(json.dumps(base))
    return p


@pytest.fixture
def features(tmp_path):
    out = tmp_path / "syn"
    assert main(["synth", "--config", str(_cfg(tmp_path)), "--out", str(out)]) == 0
    return out / "features.csv"


def test_fmt_cell():
    assert fmt_cell(0.98, 0.012) == ".98 (.01)"
    assert fmt_cell(0.5, 0.0) == ".50 (.00)"
    assert fmt_cell(float("nan"), float("nan")) == "n/a"


# ---------------------------------------------------------------------------
# synth


def test_synth_writes_manifest(tmp_path, features):
    out = features.parent
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "synth" and man["seed"] == 1
    assert len(man["config_sha256"]) == 64
    assert read_features_csv(features).X.shape == (120, 5)
    assert (out / "ground_truth.json").exists()


def test_synth_missing_config(tmp_path):
    assert main(["synth", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 1


def test_synth_zero_users(tmp_path):
    assert main(["synth", "--config", str(_cfg(tmp_path, n_users=0)), "--out", str(tmp_path / "o")]) == 2


# ---------------------------------------------------------------------------
# extract


def test_extract_golden(tmp_path):
    out = tmp_path / "ext"
    assert main(["extract", "--raw", str(GOLDEN / "raw"), "--reports", str(GOLDEN / "reports.csv"),
                 "--out", str(out)]) == 0
    got, exp = read_features_csv(out / "features.csv"), read_features_csv(GOLDEN / "features.csv")
    assert got.feature_names == exp.feature_names
    assert list(got.report_id) == list(exp.report_id)
    np.testing.assert_allclose(got.X, exp.X, rtol=0, atol=1e-9, equal_nan=True)
    assert json.loads((out / "registry.json").read_text())["n_features"] == len(got.feature_names)


def test_extract_empty_raw_dir(tmp_path):
    (tmp_path / "raw").mkdir()
    rep = tmp_path / "reports.csv"
    rep.write_text("report_id,user_id,country,ts_ms,mood_raw,activity_code,location_code,social_code\n"
                   "x1,nobody,IT,5000000,3,,,\n")
    assert main(["extract", "--raw", str(tmp_path / "raw"), "--reports", str(rep),
                 "--out", str(tmp_path / "o")]) == 0
    ds = read_features_csv(tmp_path / "o" / "features.csv")
    assert len(ds) == 1
    row = ds.X[0]
    assert np.all(np.isnan(row) | (row == 0))
    assert np.isnan(row).sum() > 0


def test_extract_bad_window(tmp_path):
    assert main(["extract", "--raw", str(GOLDEN / "raw"), "--reports", str(GOLDEN / "reports.csv"),
                 "--window", "300", "--out", str(tmp_path / "o")]) == 2


def test_extract_jobs_env_invariant(tmp_path, monkeypatch):
    syn = tmp_path / "raw"
    assert main(["synth", "--raw", "--config", str(_cfg(tmp_path, n_users=5, reports_per_user=4)),
                 "--out", str(syn)]) == 0
    outs = []
    for jobs in ("1", "3"):
        monkeypatch.setenv("MOODBENCH_JOBS", jobs)
        o = tmp_path / f"e{jobs}"
        assert main(["extract", "--raw", str(syn / "raw"), "--reports", str(syn / "reports.csv"),
                     "--out", str(o)]) == 0
        outs.append((o / "features.csv").read_bytes())
    assert outs[0] == outs[1]


# ---------------------------------------------------------------------------
# evaluate


def _evaluate(features, out, *extra):
    return main(["evaluate", "--features", str(features), "--out", str(out), "--seed", "4",
                 "--approach", "country", "--model", "hm", "--task", "two", *extra])


def test_evaluate_shape(tmp_path, features):
    assert _evaluate(features, tmp_path / "a") == 0
    res = json.loads((tmp_path / "a" / "results.json").read_text())
    assert sorted(r["approach"] for r in res) == ["country:DK", "country:IT"]
    for r in res:
        assert r["model_type"] == "HM" and r["task"] == "two"
        assert len(r["per_iteration"]) == 10 and r["seed"] == 4
        assert {"mean", "std", "n_train", "n_test", "balanced"} <= set(r)
    with open(tmp_path / "a" / "results.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["scope", "HM two"] and len(rows) == 3


def test_evaluate_deterministic(tmp_path, features):
    assert _evaluate(features, tmp_path / "a", "--iterations", "3") == 0
    assert _evaluate(features, tmp_path / "b", "--iterations", "3") == 0
    for f in ("results.json", "results.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_evaluate_jobs_invariant(tmp_path, features, monkeypatch):
    monkeypatch.setenv("MOODBENCH_JOBS", "2")
    assert _evaluate(features, tmp_path / "a", "--iterations", "2") == 0
    monkeypatch.setenv("MOODBENCH_JOBS", "1")
    assert _evaluate(features, tmp_path / "b", "--iterations", "2") == 0
    assert (tmp_path / "a" / "results.json").read_bytes() == (tmp_path / "b" / "results.json").read_bytes()


def test_evaluate_small_country_exit_3(tmp_path, capsys):
    cfg = {"countries": [{"code": "IT", "n_users": 6}, {"code": "MN", "n_users": 3}],
           "reports_per_user": 8, "n_features": 4}
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    assert main(["synth", "--config", str(p), "--out", str(tmp_path / "s")]) == 0
    capsys.readouterr()
    assert _evaluate(tmp_path / "s" / "features.csv", tmp_path / "o") == 3
    assert "MN" in capsys.readouterr().err


def test_evaluate_agnostic2_hm_explicit_is_infeasible(tmp_path, features):
    assert main(["evaluate", "--features", str(features), "--out", str(tmp_path / "o"),
                 "--approach", "agnostic2", "--model", "hm"]) == 3


def test_evaluate_agnostic2_default_models_skips_hm(tmp_path, features):
    assert main(["evaluate", "--features", str(features), "--out", str(tmp_path / "o"),
                 "--approach", "agnostic2", "--iterations", "2"]) == 0
    res = json.loads((tmp_path / "o" / "results.json").read_text())
    assert {r["model_type"] for r in res} == {"PLM"}


# ---------------------------------------------------------------------------
# stats and report


def test_stats_outputs_and_determinism(tmp_path, features):
    for d in ("a", "b"):
        assert main(["stats", "--features", str(features), "--out", str(tmp_path / d),
                     "--seed", "2", "--top", "3"]) == 0
    for f in ("stats.csv", "top_features.csv", "descriptive.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    top = json.loads((tmp_path / "a" / "top_features.json").read_text())
    assert set(top) == {"DK", "IT"} and all(len(v) <= 3 for c in top.values() for v in c.values())


def test_stats_empty_dataset(tmp_path, features):
    empty = tmp_path / "empty.csv"
    with open(features) as fh:
        empty.write_text(fh.readline())
    assert main(["stats", "--features", str(empty), "--out", str(tmp_path / "o")]) == 2


def test_report(tmp_path, features):
    assert _evaluate(features, tmp_path / "ev", "--iterations", "2") == 0
    assert main(["stats", "--features", str(features), "--out", str(tmp_path / "st")]) == 0
    assert main(["report", "--results", str(tmp_path / "ev" / "results.json"),
                 "--stats", str(tmp_path / "st"), "--out", str(tmp_path / "rep")]) == 0
    for f in ("table.csv", "table.txt", "importances.csv", "hourly.csv", "class_distribution.csv",
              "context.csv"):
        assert (tmp_path / "rep" / f).exists()
    with open(tmp_path / "rep" / "hourly.csv") as fh:
        assert len(list(csv.reader(fh))) == 1 + 2 * 24


def test_report_format_and_empty(tmp_path):
    cells = [{"approach": "country:IT", "scope": "IT", "model_type": "HM", "task": "two",
              "mean": 0.98, "std": 0.012, "importances": {}},
             {"approach": "country:DK", "scope": "DK", "model_type": "HM", "task": "two",
              "mean": 0.5, "std": 0.0, "importances": {}}]
    (tmp_path / "r.json").write_text(json.dumps(cells))
    assert main(["report", "--results", str(tmp_path / "r.json"), "--out", str(tmp_path / "o")]) == 0
    text = (tmp_path / "o" / "table.txt").read_text()
    assert ".98 (.01)" in text and ".50 (.00)" in text
    (tmp_path / "e.json").write_text("[]")
    assert main(["report", "--results", str(tmp_path / "e.json"), "--out", str(tmp_path / "o2")]) == 2


def test_report_missing_file(tmp_path):
    assert main(["report", "--results", str(tmp_path / "none.json"), "--out", str(tmp_path / "o")]) == 1
