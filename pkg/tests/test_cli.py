import json

import numpy as np
import pytest

from gesturetrace.dataset import ClipDataset
from gesturetrace.network import forward, load_model

from conftest import cli_chain, run_cli, tree_bytes


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    root = tmp_path_factory.mktemp("chain")
    stdout = cli_chain(root / "a")
    return root / "a", stdout


def test_chain_outputs(chain):
    d, stdout = chain
    assert sorted(p.name for p in (d / "sim").iterdir())[:2] == ["rec0000.ann.json",
                                                                 "rec0000.det.jsonl"]
    assert (d / "one.ann.json").exists()
    header = (d / "one.csv").read_text().splitlines()[0].split(",")
    assert header[:4] == ["trace_id", "frame", "kpt0_vu", "kpt0_vv"]
    assert header[-1] == "edge3_dv" and len(header) == 2 + 18
    assert (d / "one_box.csv").read_text().splitlines()[0].endswith("box_w,box_h")
    first = json.loads((d / "traces" / "rec0000.trace.jsonl").read_text().splitlines()[0])
    assert set(first) == {"frame", "traces", "events"}
    inspect = stdout["07 dataset"]
    assert "clips" in inspect and "negative" in inspect
    assert (d / "confusion.csv").read_text().startswith("confusion_v1,negative")
    assert "accuracy" in stdout["09 eval"]
    hist = json.loads((d / "model.bin.history.json").read_text())
    assert len(hist) == 2
    for line in (d / "events.jsonl").read_text().splitlines():
        assert set(json.loads(line)) == {"trace_id", "class", "frame", "prob"}
    test = ClipDataset.load(d / "test.bin")
    model, extra = load_model(d / "model.bin")
    assert extra["feature_mode"] == "motion" and extra["t_obj"] == 13
    assert forward(model, test.X).shape == (len(test), 3)


def test_chain_is_byte_identical(chain, tmp_path):
    d, stdout = chain
    again = cli_chain(tmp_path / "a")
    assert tree_bytes(d) == tree_bytes(tmp_path / "a")
    assert again == stdout


def test_seed_changes_simulation(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"corpus": {"recordings": 2}}))
    run_cli("simulate", tmp_path / "c.json", "--out", tmp_path / "s0", "--seed", 0)
    run_cli("simulate", tmp_path / "c.json", "--out", tmp_path / "s1", "--seed", 1)
    assert tree_bytes(tmp_path / "s0") != tree_bytes(tmp_path / "s1")


@pytest.mark.parametrize("argv", [[], ["bogus"], ["train", "--data", "x"],
                                  ["track", "--input", "a", "--out", "b", "--nope"],
                                  ["dataset"], ["train", "--data", "x", "--out", "y",
                                                "--epochs", "many"]])
def test_usage_errors_exit_1(argv, capsys):
    assert run_cli(*argv)[0] == 1
    assert "usage" in capsys.readouterr().err


def test_data_errors_exit_2(chain, tmp_path, monkeypatch):
    d, _ = chain
    assert run_cli("track", "--input", tmp_path / "missing.jsonl", "--out", tmp_path / "o")[0] == 2
    (tmp_path / "bad.det.jsonl").write_text("{broken\n")
    assert run_cli("track", "--input", tmp_path / "bad.det.jsonl", "--out", tmp_path / "o")[0] == 2
    (tmp_path / "bad.json").write_text("{}")
    assert run_cli("simulate", tmp_path / "bad.json", "--out", tmp_path / "x.det.jsonl")[0] == 2
    assert run_cli("train", "--data", d / "one.csv", "--out", tmp_path / "m.bin")[0] == 2
    assert run_cli("train", "--data", d / "train.bin", "--out", tmp_path / "m.bin",
                   "--mode", "box")[0] == 2
    assert run_cli("eval", "--model", d / "train.bin", "--data", d / "test.bin")[0] == 2
    (tmp_path / "cfg.json").write_text(json.dumps({"unknown": 1}))
    assert run_cli("dataset", "inspect", d / "train.bin", "--config", tmp_path / "cfg.json")[0] == 2
    monkeypatch.setenv("LEHGR_THREADS", "lots")
    assert run_cli("dataset", "inspect", d / "train.bin")[0] == 2


def test_thread_cap_and_config_override(chain, tmp_path, monkeypatch):
    d, _ = chain
    monkeypatch.setenv("LEHGR_THREADS", "1")
    (tmp_path / "cfg.json").write_text(json.dumps({"augmentation": {"t_obj": 9, "t_min": 6},
                                                   "train": {"hidden": 5, "epochs": 1}}))
    assert run_cli("dataset", "build", "--traces", d / "traces", "--annotations", d / "sim",
                   "--out", tmp_path / "t.bin", "--config", tmp_path / "cfg.json")[0] == 0
    ds = ClipDataset.load(tmp_path / "t.bin")
    assert ds.t_obj == 9
    assert run_cli("train", "--data", tmp_path / "t.bin", "--out", tmp_path / "m.bin",
                   "--config", tmp_path / "cfg.json")[0] == 0
    model, _ = load_model(tmp_path / "m.bin")
    assert model.config.hidden == 5


def test_box_mode_chain(chain, tmp_path):
    d, _ = chain
    assert run_cli("dataset", "build", "--traces", d / "traces", "--annotations", d / "sim",
                   "--out", tmp_path / "b.bin", "--mode", "box", "--no-augment")[0] == 0
    assert ClipDataset.load(tmp_path / "b.bin").width == 4
    assert run_cli("train", "--data", tmp_path / "b.bin", "--out", tmp_path / "m.bin",
                   "--mode", "box", "--epochs", 1, "--hidden", 4)[0] == 0
    assert run_cli("infer", "--model", tmp_path / "m.bin", "--input", d / "one.det.jsonl",
                   "--out", tmp_path / "e.jsonl")[0] == 0


def test_infer_uses_model_skeleton(chain, tmp_path):
    d, _ = chain
    (tmp_path / "cfg.json").write_text(json.dumps(
        {"skeleton": {"keypoint_count": 5, "edges": [[0, 1], [1, 2]]}}))
    assert run_cli("dataset", "build", "--traces", d / "traces", "--annotations", d / "sim",
                   "--out", tmp_path / "s.bin", "--no-augment",
                   "--config", tmp_path / "cfg.json")[0] == 0
    assert ClipDataset.load(tmp_path / "s.bin").width == 14
    assert run_cli("train", "--data", tmp_path / "s.bin", "--out", tmp_path / "m.bin",
                   "--epochs", 1, "--hidden", 4)[0] == 0
    # no --config here: the skeleton must come from the model file
    assert run_cli("infer", "--model", tmp_path / "m.bin", "--input", d / "one.det.jsonl",
                   "--out", tmp_path / "e.jsonl")[0] == 0
