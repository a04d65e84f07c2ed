import json

import numpy as np
import pytest

from birnode.cli import main
from birnode.data import gap_labels, load_jsonl
from birnode.models import load_checkpoint
from birnode.reports import read_jsonl

from oracles import weighted_prf_bruteforce

SMALL = ["--set", "model.hidden_width=8", "--set", "model.dynamics_layers=[8]",
         "--set", "data.split_mode=sequence", "--set", "train.batch_size=10"]


def synth(path, n=40, length=8, seed=3, extra=()):
    assert main(["synth", "--n", str(n), "--len", str(length), "--seed", str(seed),
                 "--out", str(path), *extra]) == 0
    return path


@pytest.fixture(scope="module")
def gap_file(tmp_path_factory):
    return synth(tmp_path_factory.mktemp("data") / "gap.jsonl")


def train_run(out, data, arch="RNODE", epochs=2, extra=()):
    return main(["train", "--data", str(data), "--arch", arch, "--epochs", str(epochs),
                 "--out-dir", str(out), *SMALL, *extra])


def test_synth_counts_and_determinism(tmp_path, capsys):
    a = synth(tmp_path / "a.jsonl", n=200, length=20, seed=7, extra=["--gamma", "0.05"])
    summary = json.loads(capsys.readouterr().out)
    assert summary["sequences"] == 200 and set(summary["gap_quantiles"]) == {"q10", "q50", "q90"}
    b = synth(tmp_path / "b.jsonl", n=200, length=20, seed=7, extra=["--gamma", "0.05"])
    assert a.read_bytes() == b.read_bytes()
    seqs = load_jsonl(a)
    assert len(seqs) == 200
    for s in seqs:
        np.testing.assert_array_equal(gap_labels(s.t, 0.05), s.y)


@pytest.mark.parametrize("gamma", ["0", "1.2", "-0.5"])
def test_synth_invalid_gamma(tmp_path, gamma):
    assert main(["synth", "--gamma", gamma, "--out", str(tmp_path / "x.jsonl")]) == 2


def test_train_writes_artifacts(tmp_path, gap_file):
    out = tmp_path / "run"
    assert train_run(out, gap_file) == 0
    for name in ("config.json", "checkpoint.json", "history.jsonl", "timing.jsonl",
                 "report.jsonl", "report.txt"):
        assert (out / name).is_file(), name
    assert [r["epoch"] for r in read_jsonl(out / "history.jsonl")] == [1, 2]
    snapshot = json.loads((out / "config.json").read_text())
    assert snapshot["model.arch"] == "RNODE" and snapshot["train.epochs"] == 2


def test_rerun_from_snapshot_is_bitwise_identical(tmp_path, gap_file):
    assert train_run(tmp_path / "a", gap_file) == 0
    assert main(["train", "--config", str(tmp_path / "a" / "config.json"),
                 "--out-dir", str(tmp_path / "b")]) == 0
    for name in ("checkpoint.json", "history.jsonl", "report.jsonl", "report.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_missing_dataset_exit_2(tmp_path):
    assert train_run(tmp_path / "r", tmp_path / "nope.jsonl") == 2


def test_unknown_config_key_exit_2(tmp_path, gap_file, capsys):
    assert train_run(tmp_path / "r", gap_file, extra=["--set", "model.depth=3"]) == 2
    assert "model.depth" in capsys.readouterr().err


def test_bad_config_file_exit_2(tmp_path, gap_file):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"data.path": str(gap_file), "solver.method": "leapfrog"}))
    assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "r")]) == 2


def test_evaluate_majority_and_repeatability(tmp_path, gap_file, capsys):
    run = tmp_path / "maj"
    assert train_run(run, gap_file, arch="Majority") == 0
    capsys.readouterr()
    assert main(["evaluate", "--checkpoint", str(run / "checkpoint.json"), "--split", "all"]) == 0
    out = capsys.readouterr().out
    row = out.splitlines()[2].split()
    assert row[0] == "Majority" and row[1] == "0" and row[2] == "0.500"
    first = (run / "eval_all" / "report.jsonl").read_bytes()
    assert main(["evaluate", "--checkpoint", str(run / "checkpoint.json"), "--split", "all"]) == 0
    assert (run / "eval_all" / "report.jsonl").read_bytes() == first


def test_evaluate_exports(tmp_path, gap_file):
    run = tmp_path / "bi"
    assert train_run(run, gap_file, arch="BiRNODE") == 0
    assert main(["evaluate", "--checkpoint", str(run / "checkpoint.json"), "--export-roc",
                 "--export-hidden", "--out-dir", str(tmp_path / "ev")]) == 0
    records = read_jsonl(tmp_path / "ev" / "report.jsonl")
    summary = records[0]
    confusion = [r["counts"] for r in records if r["kind"] == "confusion"]
    y_true = [t for t, row in enumerate(confusion) for p, n in enumerate(row) for _ in range(n)]
    y_pred = [p for t, row in enumerate(confusion) for p, n in enumerate(row) for _ in range(n)]
    assert abs(weighted_prf_bruteforce(y_true, y_pred, 2)[2] - summary["weighted_f1"]) < 1e-12
    roc = np.loadtxt(tmp_path / "ev" / "roc_class1.csv", delimiter=",", skiprows=1)
    assert roc.shape[1] == 2 and roc[0].tolist() == [0.0, 0.0] and roc[-1].tolist() == [1.0, 1.0]
    hidden = read_jsonl(tmp_path / "ev" / "hidden.jsonl")
    assert len(hidden[0]["h"]) == len(hidden[0]["h_b"]) == 8
    assert len(hidden) == summary["n"]


def test_evaluate_width_mismatch_exit_2(tmp_path, gap_file):
    run = tmp_path / "r"
    assert train_run(run, gap_file, arch="GRU", epochs=1) == 0
    wide = synth(tmp_path / "wide.jsonl", n=10, extra=["--feature-width", "6"])
    assert main(["evaluate", "--checkpoint", str(run / "checkpoint.json"), "--data", str(wide)]) == 2


def test_predict_unlabeled(tmp_path, gap_file):
    run = tmp_path / "r"
    assert train_run(run, gap_file, arch="LSTMTimeGap", epochs=1) == 0
    lines = gap_file.read_text().splitlines()
    header = json.loads(lines[0])
    header["labeled"] = False
    posts = [json.loads(line) for line in lines[1:17]]
    for p in posts:
        del p["y"]
    unlabeled = tmp_path / "u.jsonl"
    unlabeled.write_text("\n".join(json.dumps(r) for r in [header, *posts]) + "\n")
    assert main(["predict", "--checkpoint", str(run / "checkpoint.json"),
                 "--data", str(unlabeled), "--out", str(tmp_path / "pred.jsonl")]) == 0
    preds = read_jsonl(tmp_path / "pred.jsonl")
    assert len(preds) == 16
    assert all(p["label"] in (0, 1) and abs(sum(p["proba"]) - 1) < 1e-12 for p in preds)


def test_solver_budget_exhaustion_exit_3(tmp_path, gap_file):
    code = train_run(tmp_path / "r", gap_file, epochs=1, extra=[
        "--set", "solver.method=dopri5", "--set", "solver.max_adaptive_steps=1",
        "--set", "solver.rtol=1e-12", "--set", "solver.atol=1e-12"])
    assert code == 3


def test_compare_table(tmp_path, capsys):
    data = synth(tmp_path / "gap.jsonl", n=200, length=20, seed=1)
    capsys.readouterr()
    out = tmp_path / "cmp"
    code = main(["compare", "--archs", "RNODE,LSTM,Majority", "--data", str(data),
                 "--epochs", "15", "--out-dir", str(out),
                 "--set", "model.hidden_width=16", "--set", "model.dynamics_layers=[16]",
                 "--set", "data.split_mode=sequence", "--set", "train.batch_size=20"])
    assert code == 0
    rows = read_jsonl(out / "compare.jsonl")
    assert [r["arch"] for r in rows] == ["RNODE", "LSTM", "Majority"]
    for r in rows:
        model = load_checkpoint(out / r["arch"] / "checkpoint.json")
        assert r["params"] == model.count_parameters()
    f1 = {r["arch"]: r["f1"] for r in rows}
    assert f1["RNODE"] > f1["LSTM"]
    text = (out / "compare.txt").read_text().splitlines()
    assert text[0].split() == ["Model", "Params", "AUC", "F1", "Recall", "Precision"]
    assert [line.split()[0] for line in text[2:]] == ["RNODE", "LSTM", "Majority"]


def test_compare_flags_partial_failure(tmp_path, gap_file, capsys):
    code = main(["compare", "--archs", "GRU,RNODE", "--data", str(gap_file), "--epochs", "1",
                 "--out-dir", str(tmp_path / "c"), *SMALL,
                 "--set", "solver.method=dopri5", "--set", "solver.max_adaptive_steps=1",
                 "--set", "solver.rtol=1e-12", "--set", "solver.atol=1e-12"])
    assert code == 3
    text = (tmp_path / "c" / "compare.txt").read_text()
    assert "PARTIAL" in text and "RNODE" in text.splitlines()[-1]
