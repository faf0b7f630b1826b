import json

import pytest

from canet.cli import main


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["--quiet", "gen-synth", "--out", str(out), "--segments", "10", "--frames", "180"]) == 0
    return out


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["--quiet", "train", "--data", str(dataset), "--out", str(out), "--epochs", "1", "--test-fraction", "0.3"])
    assert code == 0
    return out


def run_json(capsys, argv):
    code = main(["--json", *argv])
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


def test_gen_synth_summary(tmp_path, capsys):
    assert main(["gen-synth", "--out", str(tmp_path / "d"), "--segments", "152", "--frames", "515"]) == 0
    assert capsys.readouterr().out.strip() == "152 segments, 1976 windows"


def test_gen_synth_degenerate_note_and_determinism(tmp_path, capsys):
    argv = ["gen-synth", "--segments", "3", "--frames", "160", "--amplitude", "0"]
    assert main([*argv, "--out", str(tmp_path / "a")]) == 0
    assert "degenerate: classes identical" in capsys.readouterr().out
    main(["--quiet", *argv, "--out", str(tmp_path / "b")])
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_gen_synth_exit_codes(tmp_path):
    assert main(["gen-synth", "--out", str(tmp_path), "--informative", "nope"]) == 2
    assert main(["gen-synth", "--out", str(tmp_path), "--segments", "x"]) == 2
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["--quiet", "gen-synth", "--out", str(blocker / "sub"), "--segments", "2", "--frames", "150"]) == 1


def test_train_writes_three_files(trained):
    assert sorted(p.name for p in trained.iterdir()) == ["config.ini", "history.json", "model.json"]
    hist = json.loads((trained / "history.json").read_text())
    assert hist["config"]["epochs"] == 1 and len(hist["epochs"]) == 1
    assert "confusion" in hist["final"]
    ini = (trained / "config.ini").read_text()
    assert "learning_rate = 0.001" in ini and "test_fraction = 0.3" in ini


def test_train_is_repeatable(dataset, trained, tmp_path):
    main(["--quiet", "train", "--data", str(dataset), "--out", str(tmp_path), "--epochs", "1", "--test-fraction", "0.3"])
    assert (tmp_path / "history.json").read_bytes() == (trained / "history.json").read_bytes()


def test_train_from_config_file(dataset, tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"[train]\nepochs = 1\nbatch_size = 16\n\n[data]\npath = {dataset}\ntest_fraction = 0.3\n")
    assert main(["--quiet", "train", "--config", str(cfg), "--out", str(tmp_path / "o"), "--batch-size", "8"]) == 0
    hist = json.loads((tmp_path / "o" / "history.json").read_text())
    assert hist["config"]["batch_size"] == 8 and hist["config"]["epochs"] == 1


def test_train_exit_codes(dataset, tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\nwarmup = 3\n")
    assert main(["train", "--config", str(bad), "--data", str(dataset), "--out", str(tmp_path)]) == 2
    assert main(["train", "--data", str(dataset), "--out", str(tmp_path), "--epochs", "-1"]) == 2
    assert main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path)]) == 3
    capsys.readouterr()
    assert main(["train", "--data", str(dataset), "--out", str(tmp_path), "--model", "gcn-canet"]) == 3
    assert "joints" in capsys.readouterr().err


def test_eval_and_fuse(dataset, trained, capsys):
    model = str(trained / "model.json")
    code, metrics = run_json(capsys, ["eval", "--model", model, "--data", str(dataset)])
    assert code == 0 and metrics["n"] > 0
    code, fused = run_json(capsys, ["fuse", "--model", model, "--model", model, "--model", model, "--data", str(dataset)])
    assert code == 0
    assert fused["accuracy"] == metrics["accuracy"] and fused["confusion"] == metrics["confusion"]
    assert json.loads((trained / "metrics.json").read_text())["models"] == [model] * 3


def test_fuse_needs_three_models(dataset, trained, capsys):
    model = str(trained / "model.json")
    assert main(["fuse", "--model", model, "--model", model, "--data", str(dataset)]) == 2
    assert "at least triple predictions" in capsys.readouterr().err


def test_eval_missing_model(dataset, tmp_path):
    assert main(["eval", "--model", str(tmp_path / "none.json"), "--data", str(dataset)]) == 1


def test_export_attention(dataset, trained, tmp_path, capsys):
    code, payload = run_json(
        capsys,
        ["export-attention", "--model", str(trained / "model.json"), "--data", str(dataset), "--out", str(tmp_path), "--window", "1"],
    )
    assert code == 0 and len(payload["files"]) == 4
    header = (tmp_path / "temporal.csv").read_text().split("\n")[0].split(",")
    assert header == ["frame"] + [f"s{i}" for i in range(7)]
    assert len((tmp_path / "component.csv").read_text().strip().split("\n")) == 9
    assert main(["--quiet", "export-attention", "--model", str(trained / "model.json"), "--data", str(dataset),
                 "--out", str(tmp_path), "--window", "999"]) == 2


def test_gradcheck_command(capsys):
    code, payload = run_json(capsys, ["gradcheck", "--seeds", "1"])
    assert code == 0 and payload["passed"]
    assert {c["case"] for c in payload["checks"]} >= {"lstm-stack", "gcn-layer", "canet", "gcn-canet"}


def test_global_flags_after_subcommand(dataset, capsys):
    code = main(["gen-synth", "--out", str(dataset.parent / "j"), "--segments", "2", "--frames", "150", "--json", "--seed", "4"])
    assert code == 0 and json.loads(capsys.readouterr().out)["segments"] == 2
