import json
import subprocess
import sys

import numpy as np
import pytest

from trendcast import cli, model
from trendcast.model import ComponentSpec
from trendcast.series import emit_series_csv, read_series_csv

LLT = ComponentSpec("local_linear_trend")

PANEL = "Category: All categories\n\nMonth,p,q,r\n2004-01,10,40,70\n2004-02,20,50,80\n2004-03,30,60,90\n"


def small_series(n=40, seed=3):
    ss = model.build([LLT], {"obs": 1.0, "level": 0.2, "slope": 0.001}, initial_level=50.0, diffuse_variance=1.0)
    return model.simulate(ss, n, seed=seed, name="arrivals")


@pytest.fixture
def series_file(tmp_path):
    path = tmp_path / "y.csv"
    path.write_text(emit_series_csv(small_series()))
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_average_hand_example(tmp_path):
    (tmp_path / "panel.csv").write_text(PANEL)
    assert run("average", tmp_path / "panel.csv", "--out", tmp_path / "o") == 0
    y = read_series_csv((tmp_path / "o" / "average.csv").read_text())
    assert y.values.tolist() == [40.0, 50.0, 60.0]


def test_ingest_then_average(tmp_path):
    (tmp_path / "a.csv").write_text(PANEL)
    assert run("ingest", tmp_path / "a.csv", "--out", tmp_path) == 0
    assert run("average", tmp_path / "panel.csv", "--out", tmp_path) == 0
    assert read_series_csv((tmp_path / "average.csv").read_text()).values.tolist() == [40.0, 50.0, 60.0]


def test_correlate_with_itself(tmp_path, series_file):
    assert run("correlate", series_file, series_file, "--out", tmp_path) == 0
    out = json.loads((tmp_path / "correlation.json").read_text())
    assert out["correlation"] == 1.0


def test_fit_twice_is_byte_identical(tmp_path, series_file):
    for d in ("a", "b"):
        assert run("fit", series_file, "--iterations", 200, "--burnin", 50, "--seed", 7, "--out", tmp_path / d) == 0
    first = (tmp_path / "a" / "summary.json").read_bytes()
    assert first == (tmp_path / "b" / "summary.json").read_bytes()
    summary = json.loads(first)
    assert {"residual.sd", "prediction.sd", "r.square"} <= set(summary)
    assert summary["draws"] == 150


def test_manifest_echoes_resolved_config(tmp_path, series_file):
    assert run("fit", series_file, "--iterations", 100, "--burnin", 20, "--out", tmp_path) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "fit"
    assert manifest["outputs"] == ["draws.npz", "summary.json"]
    cfg = manifest["config"]
    assert cfg["iterations"] == 100 and cfg["burnin"] == 20 and cfg["thinning"] == 1
    assert cfg["inputs"] == [str(series_file)]
    assert "seed" in cfg


def test_flags_override_config_file(tmp_path, series_file):
    conf = tmp_path / "conf.json"
    conf.write_text(json.dumps({"iterations": 120, "burnin": 20, "seed": 4}))
    assert run("fit", series_file, "--config", conf, "--burnin", 30, "--out", tmp_path) == 0
    cfg = json.loads((tmp_path / "manifest.json").read_text())["config"]
    assert (cfg["iterations"], cfg["burnin"], cfg["seed"]) == (120, 30, 4)


def test_seed_from_environment(tmp_path, series_file, monkeypatch):
    monkeypatch.setenv("TRENDCAST_SEED", "11")
    assert run("fit", series_file, "--iterations", 60, "--burnin", 10, "--out", tmp_path) == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["config"]["seed"] == 11
    assert run("fit", series_file, "--iterations", 60, "--burnin", 10, "--seed", 2, "--out", tmp_path) == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["config"]["seed"] == 2
    monkeypatch.setenv("TRENDCAST_SEED", "eleven")
    assert run("fit", series_file, "--iterations", 60, "--burnin", 10, "--out", tmp_path) == 2


def test_exit_codes(tmp_path, series_file, capsys):
    # unknown config key and a missing period are argument errors
    conf = tmp_path / "conf.json"
    conf.write_text(json.dumps({"iterashuns": 5}))
    assert run("fit", series_file, "--config", conf, "--out", tmp_path) == 2
    assert run("impact", series_file, "--pre", "0..20", "--out", tmp_path) == 2
    assert run("fit", series_file, "--iterations", 10, "--burnin", 10, "--out", tmp_path) == 2
    # unreadable or malformed data
    assert run("fit", tmp_path / "missing.csv", "--out", tmp_path) == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("period,value\n2004-01,1\n2004-03,2\n")
    assert run("correlate", bad, bad, "--out", tmp_path) == 3
    with pytest.raises(SystemExit) as exc:
        run("fit")
    assert exc.value.code == 2
    assert "error" in capsys.readouterr().err


def test_numerical_failure_exit_code(tmp_path):
    flat = tmp_path / "flat.csv"
    flat.write_text(emit_series_csv(small_series().with_values(np.full(40, 5.0))))
    assert run("fit", flat, "--iterations", 50, "--burnin", 10, "--out", tmp_path) == 4


def test_forecast_and_compare_outputs(tmp_path, series_file):
    spec = tmp_path / "semi.json"
    spec.write_text(json.dumps({"components": [{"variant": "semilocal_linear_trend"}], "label": "semi"}))
    assert run("fit", series_file, "--iterations", 150, "--burnin", 50, "--out", tmp_path / "llt") == 0
    assert run("fit", series_file, "--model", spec, "--iterations", 150, "--burnin", 50,
               "--out", tmp_path / "semi") == 0
    assert run("forecast", tmp_path / "llt" / "draws.npz", "--horizon", 6, "--out", tmp_path / "fc") == 0
    rows = (tmp_path / "fc" / "forecast.csv").read_text().splitlines()
    assert rows[0] == "period,mean,lo,hi" and len(rows) == 7
    assert run("compare", tmp_path / "llt" / "draws.npz", tmp_path / "semi" / "draws.npz",
               "--out", tmp_path / "cmp") == 0
    report = json.loads((tmp_path / "cmp" / "comparison.json").read_text())
    assert sorted(report["models"]) == ["model", "semi"]
    assert (tmp_path / "cmp" / "curves.csv").read_text().startswith("model,period,cumerr\n")
    # two fits with the default label cannot be told apart
    assert run("compare", tmp_path / "llt" / "draws.npz", tmp_path / "llt" / "draws.npz",
               "--out", tmp_path / "cmp") == 2


def test_module_entry_point(tmp_path, series_file):
    proc = subprocess.run([sys.executable, "-m", "trendcast", "correlate", str(series_file), str(series_file),
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads((tmp_path / "correlation.json").read_text())["correlation"] == 1.0
