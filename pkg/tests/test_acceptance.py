"""Acceptance criteria, one test each.

Every test records a ``PASS``/``FAIL`` line (shown in the pytest terminal
summary) with the measured quantity and its runtime against the budget.
Run directly with ``python tests/test_acceptance.py`` to get only those lines.
"""

import math
import sys
import time

import numpy as np
import pytest

from birnode import autodiff as ad
from birnode.cli import main as cli_main
from birnode.data import GapTaskSpec, SplitSpec, TimedSequence, generate_synthetic, make_batch, split_dataset
from birnode.metrics import classification_report
from birnode.models import ModelConfig, build_model, count_parameters
from birnode.ode import SolverConfig, ode_solve
from birnode.training import TrainConfig, cross_entropy, evaluate, train

from gradcheck import max_grad_error
from oracles import birnn_logits, rnn_logits, weighted_auc_bruteforce, weighted_prf_bruteforce

RESULTS: list[str] = []


def record(n, title, ok, detail, seconds, budget):
    in_time = seconds < budget
    status = "PASS" if ok and in_time else "FAIL"
    line = f"{status} criterion {n:>2} {title}: {detail}; {seconds:.2f}s (budget {budget:g}s)"
    RESULTS.append(line)
    print(line)
    assert ok, line
    assert in_time, line


def decay(h, t, gap=None):
    return ad.scale(h, -1.0)


def test_c01_solver_orders():
    start = time.perf_counter()
    ratios = {}
    for method in ("euler", "rk4"):
        errs = []
        for n in (10, 20, 40, 80, 160):
            out = ode_solve(decay, ad.tensor([[1.0]]), 0.0, 1.0, SolverConfig(method, steps_per_unit_time=n))
            errs.append(abs(out.data[0, 0] - math.exp(-1)))
        ratios[method] = [a / b for a, b in zip(errs, errs[1:])]
    ok = all(1.7 <= r <= 2.3 for r in ratios["euler"]) and all(12 <= r <= 20 for r in ratios["rk4"])
    detail = ", ".join(f"{m} ratios {min(r):.3f}..{max(r):.3f}" for m, r in ratios.items())
    record(1, "solver orders", ok, detail, time.perf_counter() - start, 1)


def test_c02_dopri5_accuracy():
    start = time.perf_counter()
    stats = {}
    cfg = SolverConfig("dopri5", rtol=1e-6, atol=1e-8)
    out = ode_solve(decay, ad.tensor([[1.0]]), 0.0, 1.0, cfg, stats=stats)
    err = abs(out.data[0, 0] - math.exp(-1))
    ok = err < 1e-6 and stats["accepted"] <= 200
    record(2, "dopri5 accuracy", ok, f"error {err:.2e}, {stats['accepted']} accepted steps",
           time.perf_counter() - start, 1)


def test_c03_gradient_fidelity():
    start = time.perf_counter()
    worst = {}
    solver = SolverConfig("euler", steps_per_unit_time=8)  # 2 + 2 + 4 steps per direction
    for arch in ("RNODE", "BiRNODE"):
        model = build_model(ModelConfig(arch, input_width=2, hidden_width=8, dynamics_layers=(8,), solver=solver), seed=3)
        rng = np.random.default_rng(0)
        for p in model.parameters().values():
            p.data = p.data + 0.1 * rng.standard_normal(p.shape)
        s = TimedSequence("g", np.array([0.2, 0.45, 0.9]), rng.standard_normal((3, 2)), np.array([0, 1, 1]))
        batch = make_batch([s])
        loss = lambda: cross_entropy(model.forward(batch).logits, s.y, np.ones(3))
        groups = {}
        for name, p in model.parameters().items():
            groups.setdefault(f"{arch}:{name.split('.')[0]}", []).append(p)
        for g, params in groups.items():
            worst[g] = max_grad_error(loss, params)
    top = max(worst, key=worst.get)
    ok = all(v < 1e-3 for v in worst.values())
    record(3, "gradient fidelity", ok, f"max rel err {worst[top]:.2e} ({top}), {len(worst)} groups",
           time.perf_counter() - start, 30)


def test_c04_reduction_oracle():
    start = time.perf_counter()
    diffs = {}
    rng = np.random.default_rng(2)
    s = TimedSequence("r", np.sort(rng.uniform(size=9)), rng.standard_normal((9, 3)))
    for arch, agg in (("RNODE", "concat"), ("BiRNODE", "concat"), ("BiRNODE", "average")):
        model = build_model(ModelConfig(arch, input_width=3, hidden_width=16, dynamics_layers=(16,), aggregation=agg), seed=1)
        for name, p in model.parameters().items():
            if name.startswith("dynamics"):
                p.data = np.zeros_like(p.data)
        got = model.predict_logits(make_batch([s]))[0]
        ref = rnn_logits(model, s.x) if arch == "RNODE" else birnn_logits(model, s.x, agg)
        diffs[f"{arch}/{agg}"] = float(np.max(np.abs(got - ref)))
    ok = all(d <= 1e-12 for d in diffs.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in diffs.items())
    record(4, "reduction oracle", ok, detail, time.perf_counter() - start, 5)


def test_c05_timestamp_sensitivity():
    start = time.perf_counter()
    rng = np.random.default_rng(11)
    x = rng.standard_normal((6, 3))
    a = TimedSequence("a", np.array([0.05, 0.2, 0.3, 0.6, 0.7, 1.0]), x)
    b = TimedSequence("b", np.array([0.05, 0.4, 0.5, 0.6, 0.9, 1.0]), x)
    blind, aware = {}, {}
    for arch in ("LSTM", "GRU", "BiLSTM", "BiGRU", "RNODE", "BiRNODE", "LSTMTimeGap"):
        model = build_model(ModelConfig(arch, input_width=3, hidden_width=16, dynamics_layers=(16,)), seed=4)
        la = model.predict_logits(make_batch([a]))
        lb = model.predict_logits(make_batch([b]))
        if arch in ("RNODE", "BiRNODE", "LSTMTimeGap"):
            aware[arch] = float(np.max(np.abs(la - lb)))
        else:
            blind[arch] = la.tobytes() == lb.tobytes()
    ok = all(blind.values()) and all(d > 1e-8 for d in aware.values())
    detail = "bitwise equal " + ",".join(k for k, v in blind.items() if v) + "; " + ", ".join(
        f"{k} diff {v:.1e}" for k, v in aware.items())
    record(5, "timestamp sensitivity", ok, detail, time.perf_counter() - start, 5)


GAP_SPEC = GapTaskSpec(n_sequences=1000, length=20, noise=0.0)
GAP_SEED = 2024
GAP_TRAIN = TrainConfig(epochs=50, learning_rate=0.01, batch_size=50, dropout=0.2, seed=0)


def _gap_splits():
    seqs = generate_synthetic(GAP_SPEC, seed=GAP_SEED)
    return split_dataset(seqs, SplitSpec(mode="sequence"))


@pytest.mark.slow
def test_c06_gap_task_separation():
    start = time.perf_counter()
    tr, va, te = _gap_splits()
    acc = {}
    for arch in ("Majority", "RNODE", "BiRNODE", "LSTM", "GRU", "LSTMTimeGap"):
        model = build_model(ModelConfig(arch, input_width=GAP_SPEC.feature_width), seed=0)
        train(model, tr, va, GAP_TRAIN)
        acc[arch] = evaluate(model, te).accuracy
    maj = acc["Majority"]
    ok = (
        acc["RNODE"] >= 0.90 and acc["BiRNODE"] >= 0.90
        and acc["LSTM"] <= maj + 0.05 and acc["GRU"] <= maj + 0.05
        and acc["LSTMTimeGap"] >= 0.85
    )
    detail = ", ".join(f"{k} {v:.3f}" for k, v in acc.items())
    record(6, "gap-task separation", ok, detail, time.perf_counter() - start, 15 * 60)


def test_c07_majority_auc():
    start = time.perf_counter()
    aucs = []
    for seed, spec in enumerate([GapTaskSpec(n_sequences=40, length=10), GapTaskSpec(n_sequences=25, length=7, gamma=0.2)]):
        seqs = generate_synthetic(spec, seed=seed)
        model = build_model(ModelConfig("Majority", input_width=spec.feature_width))
        train(model, seqs[:20])
        aucs.append(evaluate(model, seqs[20:]).weighted_auc)
    ok = all(abs(a - 0.5) <= 1e-9 for a in aucs)
    record(7, "Majority AUC", ok, "weighted AUC " + ", ".join(f"{a:.12f}" for a in aucs),
           time.perf_counter() - start, 1)


def test_c08_metric_oracles():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 1001))
        k = int(rng.integers(2, 5))
        y = rng.integers(0, k, n)
        y[:2] = [0, 1]
        scores = np.round(rng.dirichlet(np.ones(k), size=n), int(rng.integers(1, 4)))
        rep = classification_report(y, scores, k)
        wp, wr, wf = weighted_prf_bruteforce(y, scores.argmax(axis=1), k)
        worst = max(worst, abs(rep.weighted_precision - wp), abs(rep.weighted_recall - wr),
                    abs(rep.weighted_f1 - wf), abs(rep.weighted_auc - weighted_auc_bruteforce(y, scores, k)))
    record(8, "metric oracles", worst < 1e-9, f"max deviation {worst:.1e} over 100 instances",
           time.perf_counter() - start, 10)


def test_c09_parameter_efficiency():
    start = time.perf_counter()
    cfg = dict(input_width=4, hidden_width=64, dynamics_layers=(64,))
    n = {a: count_parameters(build_model(ModelConfig(a, **cfg))) for a in ("RNODE", "BiRNODE", "LSTM")}
    ratio = n["BiRNODE"] / n["RNODE"]
    ok = n["RNODE"] < n["LSTM"] and 1 < ratio <= 2
    record(9, "parameter efficiency", ok,
           f"RNODE {n['RNODE']} < LSTM {n['LSTM']}, BiRNODE/RNODE {ratio:.3f}",
           time.perf_counter() - start, 1)


@pytest.mark.slow
def test_c10_determinism(tmp_path):
    start = time.perf_counter()
    assert cli_main(["synth", "--n", "1000", "--len", "20", "--seed", str(GAP_SEED), "--out", str(tmp_path / "gap.jsonl")]) == 0
    args = ["--data", str(tmp_path / "gap.jsonl"), "--arch", "BiRNODE", "--seed", "0",
            "--set", "data.split_mode=sequence"]
    for run in ("a", "b"):
        assert cli_main(["train", *args, "--out-dir", str(tmp_path / run)]) == 0
    same = {
        name: (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        for name in ("checkpoint.json", "history.jsonl", "report.jsonl", "report.txt")
    }
    record(10, "determinism", all(same.values()),
           "identical " + ", ".join(k for k, v in same.items() if v), time.perf_counter() - start, 30 * 60)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
