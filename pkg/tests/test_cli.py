import json
import subprocess
import sys

import pytest

from treenav.cli import main


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "gen-corpus" in capsys.readouterr().out
    assert main(["train", "--help"]) == 0


def test_console_script_help():
    r = subprocess.run([sys.executable, "-m", "treenav.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "navigate" in r.stdout


def test_unknown_flag_is_usage_error(capsys):
    assert main(["stats", "--data", "x", "--fao-csv", "y", "--frobnicate"]) == 1
    err = capsys.readouterr().err
    assert "usage:" in err and "--frobnicate" in err


def test_missing_subcommand(capsys):
    assert main([]) == 1


def test_bad_config_path(tmp_path, capsys):
    rc = main(["train", "--config", str(tmp_path / "nope.yaml"), "--data", str(tmp_path), "--out", str(tmp_path / "o")])
    assert rc == 1
    assert "nope.yaml" in capsys.readouterr().err


def test_invalid_config_value(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("train:\n  gamma: 1.5\n")
    assert main(["train", "--config", str(cfg), "--data", str(tmp_path), "--out", str(tmp_path / "o")]) == 1
    assert "train.gamma" in capsys.readouterr().err


def test_not_a_dataset(tmp_path, capsys):
    assert main(["stats", "--data", str(tmp_path), "--fao-csv", str(tmp_path / "f.csv")]) == 1
    assert "dataset" in capsys.readouterr().err


def run_pipeline(root, steps=200):
    """gen-corpus -> train (desk) -> navigate -> baselines -> eval; returns the paths used."""
    data, run, traces, reports = root / "data", root / "run", root / "traces", root / "reports"
    spec = root / "spec.json"
    spec.write_text(json.dumps({"num_docs": 20, "seed": 5}))
    cfg = root / "config.yaml"
    cfg.write_text("preset: desk\ntrain:\n  memory_init: 100\n  batch_size: 16\n  log_interval: 50\n")
    assert main(["gen-corpus", "--spec", str(spec), "--out", str(data)]) == 0
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(run), "--steps", str(steps), "--seed", "1"]) == 0
    assert main(["navigate", "--config", str(cfg), "--data", str(data), "--policy", "checkpoint",
                 "--checkpoint", str(run / "checkpoint.pt"), "--trace", str(traces / "docqn.jsonl"), "--split", "all"]) == 0
    for kind in ("randomwalk", "randompara", "doctfidf", "tfidf", "readtop"):
        assert main(["baseline", "--kind", kind, "--data", str(data), "--out", str(traces / f"{kind}.jsonl"), "--split", "all"]) == 0
    assert main(["baseline", "--kind", "doctfidf", "--data", str(data), "--out", str(root / "ens" / "threshold.jsonl"),
                 "--split", "all", "--ensemble", "threshold", "--l", "5", "--agent-trace", str(traces / "docqn.jsonl")]) == 0
    assert main(["eval", "--traces", str(traces), "--data", str(data), "--report", str(reports / "report.json")]) == 0
    return data, run, traces, reports


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("pipe"))


def test_pipeline_outputs(pipeline):
    data, run, traces, reports = pipeline
    for d in (data, run, traces, reports):
        assert len(list(d.glob("manifest.json"))) == 1
    m = json.loads((run / "manifest.json").read_text())
    assert m["command"] == "train" and m["seed"] == 1 and len(m["data_hash"]) == 64
    assert m["config"]["train"]["steps"] == 200
    assert (run / "metrics.csv").exists() and (run / "checkpoint.pt").exists()
    rep = json.loads((reports / "report.json").read_text())
    assert set(rep["methods"]) == {"docqn", "randomwalk", "randompara", "doctfidf", "tfidf", "readtop"}
    for method, r in rep["methods"].items():
        assert 0.0 <= r["navigation_accuracy"] <= 1.0
        assert (reports / f"report.{method}.stop_index.csv").exists()
    # every pair of the dataset appears once per method
    n = sum(1 for _ in open(traces / "docqn.jsonl"))
    assert all(r["n_pairs"] == n for r in rep["methods"].values())


def test_eval_of_ensemble(pipeline, tmp_path):
    data, _, _, _ = pipeline
    ens = data.parent / "ens"
    assert main(["eval", "--traces", str(ens / "threshold.jsonl"), "--data", str(data), "--report", str(tmp_path / "r.json")]) == 0
    assert "threshold" in json.loads((tmp_path / "r.json").read_text())["methods"]


def test_ensemble_needs_agent_trace(pipeline, tmp_path):
    data = pipeline[0]
    assert main(["baseline", "--kind", "doctfidf", "--data", str(data), "--out", str(tmp_path / "x.jsonl"), "--ensemble", "answer"]) == 1


def test_stats(pipeline, tmp_path, capsys):
    assert main(["stats", "--data", str(pipeline[0]), "--fao-csv", str(tmp_path / "fao.csv")]) == 0
    out = json.loads(capsys.readouterr().out)
    # num_docs counts documents; each question has one to three of them
    assert out["documents"] == 20
    assert out["questions"] == sum(1 for _ in open(pipeline[0] / "qa.jsonl"))
    assert (tmp_path / "fao.csv").read_text().startswith("index,count\n")
