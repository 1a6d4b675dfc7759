import csv
import json

import pytest

from covtpp.cli import main
from covtpp.config import ConfigError, load_config


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Simulate, train, rank and ablate once on the tiny preset."""
    d = tmp_path_factory.mktemp("run")
    assert main(["simulate", "--config", "tiny", "--out", str(d / "data.jsonl"), "--seed", "7"]) == 0
    assert main(["train", "--config", "tiny", "--data", str(d / "data.jsonl"), "--out", str(d / "model.json"), "--seed", "1"]) == 0
    assert main(["rank-features", "--data", str(d / "data.jsonl"), "--model", str(d / "model.json"), "--out", str(d / "imp.json")]) == 0
    assert main(["ablate", "--config", "tiny", "--data", str(d / "data.jsonl"), "--ranking", str(d / "imp.json"),
                 "--out", str(d / "ablation.csv"), "--seed", "1"]) == 0
    return d


def test_simulate_is_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        code, _, _ = run(capsys, "simulate", "--config", "tiny", "--out", tmp_path / f"{name}.jsonl", "--seed", 7)
        assert code == 0
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    truth = json.loads((tmp_path / "a.truth.json").read_text())
    assert truth["ground_truth_importance"] == [0.5, 0.5, 0.0]


def test_pipeline_outputs(pipeline, capsys):
    assert (pipeline / "model.json").is_file()
    log = [json.loads(x) for x in (pipeline / "model.log.jsonl").read_text().splitlines()]
    assert log and {"epoch", "train_loss", "val_loss", "val_accuracy"} <= set(log[0])
    rows = json.loads((pipeline / "imp.json").read_text())["importance"]
    assert sorted(r["feature"] for r in rows) == [0, 1, 2]
    with open(pipeline / "ablation.csv") as fh:
        table = list(csv.DictReader(fh))
    assert [int(r["k"]) for r in table] == [0, 1, 2, 3]
    assert table[0]["removed_feature"] == ""


def test_evaluate_writes_metrics(pipeline, tmp_path, capsys):
    code, out, _ = run(capsys, "evaluate", "--data", pipeline / "data.jsonl", "--model", pipeline / "model.json",
                       "--split", "val", "--out", tmp_path / "m.json")
    assert code == 0
    m = json.loads((tmp_path / "m.json").read_text())
    assert m["split"] == "val" and 0 <= m["accuracy"] <= 1
    assert json.loads(out) == m


def test_train_is_byte_identical(pipeline, tmp_path, capsys):
    code, _, _ = run(capsys, "train", "--config", "tiny", "--data", pipeline / "data.jsonl", "--out", tmp_path / "model.json", "--seed", 1)
    assert code == 0
    assert (tmp_path / "model.json").read_bytes() == (pipeline / "model.json").read_bytes()
    assert (tmp_path / "model.log.jsonl").read_bytes() == (pipeline / "model.log.jsonl").read_bytes()


def test_inputs_not_mutated(pipeline, tmp_path, capsys):
    before = {p.name: p.read_bytes() for p in (pipeline / "data.jsonl", pipeline / "model.json")}
    run(capsys, "evaluate", "--data", pipeline / "data.jsonl", "--model", pipeline / "model.json")
    run(capsys, "rank-features", "--data", pipeline / "data.jsonl", "--model", pipeline / "model.json", "--out", tmp_path / "i.json")
    assert {p.name: p.read_bytes() for p in (pipeline / "data.jsonl", pipeline / "model.json")} == before


def test_evaluate_without_model_is_usage_error(pipeline, capsys):
    code, _, err = run(capsys, "evaluate", "--data", pipeline / "data.jsonl")
    assert code == 1
    assert "usage:" in err
    assert json.loads(err.strip().splitlines()[-1])["error"] == "usage"


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["simulate", "--out", "x.jsonl"], ["train", "--seed", "nope"]])
def test_usage_errors(argv, capsys):
    assert run(capsys, *argv)[0] == 1


def test_bad_data_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"times": [1.0, 0.5], "types": [0, 1], "covariates": [[0.0], [0.0]]}\n')
    code, _, err = run(capsys, "train", "--data", bad, "--out", tmp_path / "m.json", "--seed", 0)
    assert code == 2
    line = json.loads(err.strip().splitlines()[-1])
    assert line["error"] == "data" and "non-increasing" in line["message"]
    assert run(capsys, "train", "--data", tmp_path / "missing.jsonl", "--out", tmp_path / "m.json", "--seed", 0)[0] == 2


def test_gradcheck_tiny(capsys):
    code, out, _ = run(capsys, "gradcheck", "--config", "tiny", "--seed", 0)
    assert code == 0
    assert float(out.split()[3]) < 1e-4


def test_threads_variable(monkeypatch, capsys, tmp_path):
    monkeypatch.setenv("COVTPP_THREADS", "zero")
    assert run(capsys, "gradcheck", "--seed", 0)[0] == 1
    monkeypatch.setenv("COVTPP_THREADS", "2")
    run(capsys, "simulate", "--config", "tiny", "--out", tmp_path / "p.jsonl", "--seed", 3)
    monkeypatch.setenv("COVTPP_THREADS", "1")
    run(capsys, "simulate", "--config", "tiny", "--out", tmp_path / "s.jsonl", "--seed", 3)
    assert (tmp_path / "p.jsonl").read_bytes() == (tmp_path / "s.jsonl").read_bytes()


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[sim]\nF = 2\nw_t = [0.5, 0.5]\nw_c = [1, 0]\nN = 10\nalpha = 0.5\nbeta = 1.0\n\n[paths]\nout = "
                   + str(tmp_path / "d.jsonl") + "\n")
    rc = load_config(cfg)
    assert rc.sim_config().F == 2 and rc.paths["out"].endswith("d.jsonl")
    assert run(capsys, "simulate", "--config", cfg, "--seed", 0)[0] == 0
    assert (tmp_path / "d.jsonl").is_file()


@pytest.mark.parametrize("text", ["[sim]\ncolour = 3\n", "[extras]\nx = 1\n", "[train]\nlr = -1\n", "[paths]\nlogs = x\n"])
def test_config_rejects_unknown_or_invalid(tmp_path, text, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text(text)
    with pytest.raises(ConfigError):
        load_config(cfg)
    assert run(capsys, "gradcheck", "--config", cfg, "--seed", 0)[0] == 2
