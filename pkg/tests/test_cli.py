import json

import pytest

from adviser.cli import main

QUICK = ["--set", "epochs=2", "--set", "hidden=8", "--set", "n_train=120", "--set", "n_test=60"]


def run(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert run("generate", "--seed", "3", "--out", str(out), *QUICK) == 0
    return out


def test_generate_writes_record_files(generated):
    lines = (generated / "train_records.jsonl").read_text().splitlines()
    assert len(lines) == 120
    assert len((generated / "test_records.jsonl").read_text().splitlines()) == 60
    obj = json.loads(lines[0])
    assert {"id", "class", "errors", "features"} <= set(obj)
    assert "seed = 3" in (generated / "config.txt").read_text()


def test_ingest_and_reference_mismatch(generated, tmp_path, capsys):
    assert run("ingest", str(generated / "test_records.jsonl"), "--out", str(tmp_path)) == 0
    assert (tmp_path / "baselines.txt").exists() and (tmp_path / "baselines.csv").exists()
    assert run("ingest", str(generated / "test_records.jsonl"), "--out", str(tmp_path), "--reference") == 1
    assert "reference mismatches" in capsys.readouterr().out


def test_ingest_bad_file_exits_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"instance_id": "x", "class": "bus", "errors": {"0": 500}}\nnot json\n')
    assert run("ingest", str(bad), "--out", str(tmp_path / "o")) == 2
    err = capsys.readouterr().err
    assert "line 1" in err and "line 2" in err


def test_train_then_evaluate(generated, tmp_path):
    tr = tmp_path / "train"
    assert run("train", "--records", str(generated / "train_records.jsonl"), "--out", str(tr), *QUICK) == 0
    assert (tr / "checkpoint.json").exists()
    trace = (tr / "loss_trace.csv").read_text().splitlines()
    assert trace[0] == "epoch,learning_rate,loss" and len(trace) == 3
    ev = tmp_path / "eval"
    assert run("evaluate", "--checkpoint", str(tr / "checkpoint.json"),
               "--test-records", str(generated / "test_records.jsonl"), "--out", str(ev)) == 0
    assert "Adviser" in (ev / "table1.txt").read_text()


def test_train_regression_mode(generated, tmp_path):
    assert run("train", "--records", str(generated / "train_records.jsonl"), "--adviser-mode",
               "regression-radians", "--out", str(tmp_path), *QUICK) == 0
    assert json.loads((tmp_path / "checkpoint.json").read_text())["mode"] == "regression-radians"


@pytest.mark.parametrize(
    "command, files, extra",
    [
        ("full", ["table1.txt", "table1.csv", "checkpoint.json"], []),
        ("small", ["table2.txt", "table2.csv", "repetitions/rep0.csv", "repetitions/rep1.csv"],
         ["--repetitions", "2", "--set", "n_records=90"]),
        ("compare", ["table3.txt", "table3.csv"], []),
        ("sweep", ["sweep.txt", "sweep.csv"], ["--temperatures", "0.5,5"]),
    ],
)
def test_commands_are_reproducible(command, files, extra, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(command, "--seed", "11", "--out", str(out), *QUICK, *extra) == 0
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def settings(out):
        return [l for l in (out / "config.txt").read_text().splitlines() if not l.startswith("out =")]

    assert settings(a) == settings(b)


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("seed = 5\nepochs = 2\nhidden = 8\nn_train = 100\nn_test = 50\n")
    out = tmp_path / "o"
    assert run("generate", "--config", str(cfg), "--seed", "6", "--out", str(out)) == 0
    text = (out / "config.txt").read_text()
    assert "seed = 6" in text and "n_train = 100" in text


def test_unknown_key_is_an_error(tmp_path, capsys):
    assert run("generate", "--out", str(tmp_path), "--set", "bogus=1") == 2
    assert "bogus" in capsys.readouterr().err
