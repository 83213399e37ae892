import csv
import json

import numpy as np
import pytest

from ppwald import cli
from ppwald.core import EventTimes
from ppwald.io import (ParseError, config_hash, dataset_tables, read_curve_csv, read_dataset,
                       write_dataset)
from ppwald.simulate import Dataset, Trial, scenario, simulate_dataset


def _run(*args):
    return cli.main([str(a) for a in args])


def _write_config(path, **cfg):
    path.write_text(json.dumps(cfg))
    return path


# ---------------------------------------------------------------------------
# dataset files

def test_dataset_round_trip_exact(tmp_path):
    data = simulate_dataset(scenario("2a"), 20, 3)
    write_dataset(data, tmp_path)
    back = read_dataset(tmp_path)
    assert back == data
    assert back.horizon == 3.0
    # the events CSV alone is enough when every trial has an event
    assert read_dataset(tmp_path / "events.csv").levels == [0, 1]


def test_dataset_keeps_trials_without_events(tmp_path):
    trials = (Trial(1, EventTimes(np.array([0.3])), EventTimes()), Trial(0, EventTimes(), EventTimes()))
    write_dataset(Dataset(trials, 3.0), tmp_path)
    back = read_dataset(tmp_path)
    assert len(back) == 2 and back.trials[1].z == 0 and len(back.trials[1].n_events) == 0


def test_dataset_csv_schema():
    data = simulate_dataset(scenario("1a"), 4, 7)
    events, trials = dataset_tables(data)
    assert events.splitlines()[0] == "trial_id,z,stream,time"
    assert trials.splitlines() == ["trial_id,z", "0,1", "1,1", "2,0", "3,0"]
    assert "1,1,N,0.31892001836751227" in events.splitlines()


@pytest.mark.parametrize("text, message", [
    ("", "empty"),
    ("a,b,c,d\n", "expected header"),
    ("trial_id,z,stream,time\n0,1,Q,0.5\n", "stream"),
    ("trial_id,z,stream,time\n0,1,N,abc\n", "bad time"),
    ("trial_id,z,stream,time\n0,1,N,0.5\n0,0,Y,0.7\n", "conflicting"),
    ("trial_id,z,stream,time\n0,1,N,0.5,9\n", "4 fields"),
    ("trial_id,z,stream,time\n0,1,N,0.5\n0,1,N,0.4\n1,0,Y,0.1\n", None),
])
def test_dataset_parse_errors(tmp_path, text, message):
    path = tmp_path / "events.csv"
    path.write_text(text)
    if message is None:  # unsorted input is sorted on load
        assert read_dataset(path).trials[0].n_events.times.tolist() == [0.4, 0.5]
        return
    with pytest.raises(ParseError, match=message):
        read_dataset(path)


def test_config_hash_is_canonical():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


# ---------------------------------------------------------------------------
# CLI

@pytest.fixture(scope="module")
def sim_800(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim800")
    cfg = _write_config(root / "c.json", scenario="1a", m=800, seed=7)
    assert _run("simulate", "--config", cfg, "--out", root / "data") == 0
    return root


def test_cli_simulate(tmp_path):
    cfg = _write_config(tmp_path / "c.json", scenario="1a", m=40, seed=7)
    assert _run("simulate", "--config", cfg, "--out", tmp_path / "a") == 0
    rows = list(csv.reader((tmp_path / "a" / "trials.csv").open()))
    assert len(rows) == 41
    data = read_dataset(tmp_path / "a")
    assert all(len(tr.n_events) <= 1 for tr in data.trials)
    meta = json.loads((tmp_path / "a" / "metadata.json").read_text())
    assert meta["seed"] == 7 and "clamping" in meta and len(meta["config_hash"]) == 64
    # same config, byte-identical files
    assert _run("simulate", "--config", cfg, "--out", tmp_path / "b") == 0
    for name in ("events.csv", "trials.csv", "metadata.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cli_simulate_errors(tmp_path, capsys):
    odd = _write_config(tmp_path / "odd.json", scenario="1a", m=41)
    assert _run("simulate", "--config", odd, "--out", tmp_path / "o") != 0
    assert "even" in capsys.readouterr().err
    bad = _write_config(tmp_path / "bad.json", scenario="9z")
    assert _run("simulate", "--config", bad, "--out", tmp_path / "o") != 0
    assert "invalid scenario name" in capsys.readouterr().err
    typo = _write_config(tmp_path / "typo.json", scenario="1a", mm=4)
    assert _run("simulate", "--config", typo, "--out", tmp_path / "o") != 0
    assert "unknown keys" in capsys.readouterr().err
    nested = _write_config(tmp_path / "nested.json", estimate={"methd": "ridge"})
    assert _run("estimate", "--config", nested, "--data", tmp_path) != 0
    blocker = tmp_path / "file"
    blocker.write_text("x")
    ok = _write_config(tmp_path / "ok.json", scenario="1a", m=2)
    assert _run("simulate", "--config", ok, "--out", blocker / "sub") != 0
    assert _run("simulate", "--out", tmp_path / "o") != 0  # config required


def test_cli_custom_scenario(tmp_path):
    custom = scenario("2a", mu_y=0.5).to_dict()
    cfg = _write_config(tmp_path / "c.json", scenario="custom", scenario_config=custom, m=4, seed=1)
    assert _run("simulate", "--config", cfg, "--out", tmp_path / "d") == 0
    meta = json.loads((tmp_path / "d" / "metadata.json").read_text())
    assert meta["config"]["mu_y"] == 0.5
    missing = _write_config(tmp_path / "m.json", scenario="custom", m=4)
    assert _run("simulate", "--config", missing, "--out", tmp_path / "d") != 0


def test_cli_estimate_methods(sim_800, tmp_path):
    data = sim_800 / "data"
    assert _run("estimate", "--data", data, "--out", tmp_path) == 0
    assert _run("estimate", "--data", data, "--out", tmp_path, "--method", "spectral") == 0
    assert _run("estimate", "--data", data, "--out", tmp_path, "--method", "observational") == 0
    for method in ("ridge", "spectral", "observational"):
        t, v = read_curve_csv(tmp_path / f"fit_{method}.csv")
        assert t.size == 601 and np.all(np.isfinite(v))
        doc = json.loads((tmp_path / f"fit_{method}.json").read_text())
        assert doc["method"] == method and "config_hash" in doc
    assert (tmp_path / "fit_observational.csv").read_text().startswith("delta,g\n")
    assert (tmp_path / "fit_ridge.csv").read_text().startswith("delta,acer\n")
    ridge = json.loads((tmp_path / "fit_ridge.json").read_text())
    assert ridge["eta"] == 1 / 800 and ridge["basis"]["num_interior_knots"] == 6


def test_cli_estimate_with_cv(sim_800, tmp_path):
    cfg = _write_config(tmp_path / "c.json", estimate={"cv_knots": [2, 6], "cv_folds": 3})
    assert _run("estimate", "--config", cfg, "--data", sim_800 / "data", "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "fit_ridge.json").read_text())
    assert doc["cv"]["candidates"] == [2, 6] and len(doc["cv"]["scores"]) == 2
    assert doc["basis"]["num_interior_knots"] in (2, 6)


def test_cli_estimate_missing_level(tmp_path, capsys):
    trials = (Trial(1, EventTimes(np.array([0.3])), EventTimes()),) * 2
    write_dataset(Dataset(trials, 3.0), tmp_path / "d")
    assert _run("estimate", "--data", tmp_path / "d", "--out", tmp_path) != 0
    assert "level 0" in capsys.readouterr().err


def test_cli_diagnose(sim_800, tmp_path):
    assert _run("diagnose", "--data", sim_800 / "data", "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "monotonicity.json").read_text())
    assert rep["max_violation"] < rep["noise_band"]
    assert (tmp_path / "survival.csv").read_text().startswith("tau,survival_hi,survival_lo")


def test_cli_diagnose_swapped_arms_still_succeeds(sim_800, tmp_path):
    data = read_dataset(sim_800 / "data")
    swapped = Dataset(tuple(Trial(1 - tr.z, tr.n_events, tr.y_events) for tr in data.trials), 3.0)
    write_dataset(swapped, tmp_path / "sw")
    assert _run("diagnose", "--data", tmp_path / "sw", "--out", tmp_path) == 0
    assert json.loads((tmp_path / "monotonicity.json").read_text())["max_violation"] > 0.1


def test_cli_diagnose_empty_file(tmp_path, capsys):
    (tmp_path / "events.csv").write_text("")
    assert _run("diagnose", "--data", tmp_path / "events.csv", "--out", tmp_path) != 0
    assert "empty" in capsys.readouterr().err


def test_cli_bootstrap(sim_800, tmp_path):
    cfg = _write_config(tmp_path / "c.json", bootstrap={"b_reps": 100, "seed": 2})
    assert _run("bootstrap", "--config", cfg, "--data", sim_800 / "data", "--out", tmp_path) == 0
    lines = (tmp_path / "band.csv").read_text().splitlines()
    assert lines[0] == "delta,center,lower,upper" and len(lines) == 602
    doc = json.loads((tmp_path / "band.json").read_text())
    assert doc["b_reps"] == 100 and doc["band_scale"] == "paper"


def test_cli_experiment(tmp_path):
    cfg = _write_config(tmp_path / "c.json", study={"scenarios": ["1a", "2a"], "m_values": [4, 8],
                                                    "replicates": 3, "seed": 1})
    assert _run("experiment", "--config", cfg, "--out", tmp_path / "a") == 0
    assert _run("experiment", "--config", cfg, "--out", tmp_path / "b") == 0
    res = (tmp_path / "a" / "results.csv").read_text()
    assert res == (tmp_path / "b" / "results.csv").read_text()
    rows = res.splitlines()
    assert rows[0] == "scenario,m,replicate,r" and len(rows) == 1 + 2 * 2 * 3
    summary = (tmp_path / "a" / "summary.csv").read_text().splitlines()
    assert summary[0] == "scenario,m,median_r,q25,q75" and len(summary) == 5
    bad = _write_config(tmp_path / "bad.json", study={"scenarios": ["3"]})
    assert _run("experiment", "--config", bad, "--out", tmp_path / "c") != 0


def test_cli_version(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0
