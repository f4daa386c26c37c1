import json

import pytest
import yaml

from conftest import TINY
from uppsqa.cli import load_config, main
from uppsqa.datamodel import load_pairs


def test_build_pairs_matched(small_corpus, tmp_path, capsys):
    root, manifests = small_corpus
    out = tmp_path / "pairs.csv"
    assert main(["build-pairs", "--mode", "matched", "--manifest", str(root / "test.csv"), "--out", str(out)]) == 0
    pairs = load_pairs(out)
    # 2 transcripts x C(3, 2) system pairs within each
    assert len(pairs) == 6
    assert all(p.cluster_id >= 0 for p in pairs)
    assert "wrote 6 matched pairs" in capsys.readouterr().out


def test_build_pairs_drop_ties(small_corpus, tmp_path):
    root, _ = small_corpus
    out = tmp_path / "pairs.csv"
    main(["build-pairs", "--mode", "unmatched", "--manifest", str(root / "test.csv"), "--out", str(out), "--drop-ties"])
    assert all(p.s_p != 0 for p in load_pairs(out))


def test_load_config_resolves_paths(tmp_path):
    (tmp_path / "cfg.yaml").write_text(yaml.safe_dump({"data": {"train": "a.csv", "dev": "b.csv", "test": "/abs/c.csv"}}))
    cfg = load_config(tmp_path / "cfg.yaml")
    assert cfg["data"]["train"] == str(tmp_path / "a.csv")
    assert cfg["data"]["test"] == "/abs/c.csv"
    assert cfg["out_dir"] == str(tmp_path / "runs")


def test_load_config_missing_split(tmp_path):
    (tmp_path / "cfg.yaml").write_text(yaml.safe_dump({"data": {"train": "a.csv"}}))
    with pytest.raises(SystemExit):
        load_config(tmp_path / "cfg.yaml")


def test_train_evaluate_report(small_corpus, tmp_path, capsys):
    root, _ = small_corpus
    config = {
        "data": {"train": str(root / "train.csv"), "dev": str(root / "dev.csv"), "test": str(root / "test.csv")},
        "model": TINY,
        "train": {"lr": 0.05, "max_epochs": 2, "patience": 2, "seeds": [1]},
        "out_dir": str(tmp_path / "runs"),
    }
    cfg_path = tmp_path / "config.yaml"
    cfg_path.write_text(yaml.safe_dump(config))
    assert main(["train", "--config", str(cfg_path), "--scenario", "nm-nm", "--label-condition", "LA", "--seed", "1"]) == 0
    seed_dir = tmp_path / "runs" / "LA_nm-nm" / "seed_1"
    assert (seed_dir / "checkpoint.pt").exists()
    header = (seed_dir / "epochs.csv").read_text().splitlines()[0]
    assert header == "epoch,loss_m,loss_p,loss,dev_srcc,seconds"

    capsys.readouterr()
    out_dir = tmp_path / "eval"
    assert main([
        "evaluate", "--checkpoint", str(seed_dir / "checkpoint.pt"),
        "--pairs", str(tmp_path / "runs" / "LA_nm-nm" / "test_pairs.csv"),
        "--manifest", str(root / "test.csv"), "--out", str(out_dir), "--exclude-ties",
    ]) == 0
    printed = capsys.readouterr().out
    assert "ACC excluding ties" in printed
    rep = json.loads((out_dir / "eval.json").read_text())
    assert rep["scenario"] == "nm-nm" and rep["condition"] == "LA"

    assert main(["report", "--runs", str(tmp_path / "runs"), "--format", "csv"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[1].startswith("LA,nm-nm,")
    assert lines[1].endswith(",complete")


def test_unknown_scenario_rejected(tmp_path):
    with pytest.raises(SystemExit):
        main(["train", "--config", "x.yaml", "--scenario", "mm", "--label-condition", "LA", "--seed", "1"])
