"""Command-line entry point: ``birnode {train,evaluate,predict,synth,compare}``.

Exit codes: 0 success, 2 invalid configuration or data, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .data import (
    GapTaskSpec,
    chunk_sequences,
    generate_synthetic,
    load_jsonl,
    make_batch,
    save_jsonl,
    split_dataset,
)
from .exceptions import BirnodeError, ConfigError, NumericalError
from .models import build_model, load_checkpoint, save_checkpoint
from .reports import format_table, hidden_records, table_row, write_jsonl, write_report, write_roc
from .training import evaluate, predict_proba, train
from .validation import check_feature_width

log = logging.getLogger("birnode")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration with dotted keys")
    p.add_argument("--seed", type=int, help="random seed (overrides config)")
    p.add_argument("--out-dir", help="output directory (overrides config)")


def _overrides(args) -> dict:
    ov = {}
    for item in getattr(args, "set", None) or []:
        k, v = cfgmod.parse_override(item)
        ov[k] = v
    mapping = {"data": "data.path", "arch": "model.arch", "epochs": "train.epochs"}
    for attr, key in mapping.items():
        if getattr(args, attr, None) is not None:
            ov[key] = getattr(args, attr)
    if args.seed is not None:
        ov["seed"] = args.seed
    if args.out_dir is not None:
        ov["out_dir"] = args.out_dir
    return ov


def _load_splits(cfg: dict):
    path = cfg["data.path"]
    if not path or not Path(path).is_file():
        raise ConfigError(f"data.path not found: {path}")
    seqs, info = load_jsonl(path, return_info=True)
    if not info.labeled:
        raise ConfigError("training data must be labeled")
    train_s, val_s, test_s = split_dataset(seqs, cfgmod.split_spec(cfg))
    msl = cfg["data.max_sequence_length"]
    train_s, val_s, test_s = (
        chunk_sequences([s for s in part if len(s)], msl) for part in (train_s, val_s, test_s)
    )
    return info, train_s, val_s, test_s


def run_training(cfg: dict, out_dir: Path, name: str | None = None):
    """Train one model per ``cfg`` into ``out_dir``; returns its test report."""
    out_dir.mkdir(parents=True, exist_ok=True)
    info, train_s, val_s, test_s = _load_splits(cfg)
    mcfg = cfgmod.model_config(cfg, info.feature_width, info.num_classes)
    model = build_model(mcfg, seed=int(cfg["seed"]))
    cfgmod.dump(cfg, out_dir / "config.json")
    result = train(model, train_s, val_s, cfgmod.train_config(cfg), log=lambda r: log.info("%s", r))
    # the output location is left out so identical runs give identical bytes
    run = {k: v for k, v in cfg.items() if k != "out_dir"}
    save_checkpoint(model, out_dir / "checkpoint.json", extra={"run": run})
    write_jsonl(result.history, out_dir / "history.jsonl")
    write_jsonl(
        [{"epoch": i + 1, "seconds": s} for i, s in enumerate(result.timings)],
        out_dir / "timing.jsonl",
    )
    report = evaluate(model, test_s) if test_s else None
    if report is not None:
        write_report(report, out_dir, name or mcfg.arch)
    return report


def cmd_train(args) -> int:
    cfg = cfgmod.resolve(args.config, _overrides(args))
    out = Path(cfg["out_dir"])
    report = run_training(cfg, out)
    print(f"wrote {out / 'checkpoint.json'}")
    if report is not None:
        print(format_table([table_row(cfg["model.arch"], report)]), end="")
    return EXIT_OK


def _select(seqs_split, which: str):
    train_s, val_s, test_s = seqs_split
    return {"train": train_s, "val": val_s, "test": test_s, "all": train_s + val_s + test_s}[which]


def cmd_evaluate(args) -> int:
    model, extra = load_checkpoint(args.checkpoint, return_extra=True)
    run = extra.get("run", {})
    data = args.data or run.get("data.path")
    if not data or not Path(data).is_file():
        raise ConfigError(f"dataset not found: {data}")
    seqs, info = load_jsonl(data, return_info=True)
    check_feature_width(seqs, model.config.input_width)
    if info.num_classes != model.config.num_classes:
        raise ConfigError(
            f"dataset has {info.num_classes} classes, model expects {model.config.num_classes}"
        )
    if args.split == "all":
        chosen = seqs
    else:
        run_cfg = cfgmod.resolve(overrides={**run, "data.path": data}) if run else cfgmod.resolve()
        chosen = _select(split_dataset(seqs, cfgmod.split_spec(run_cfg)), args.split)
        chosen = chunk_sequences([s for s in chosen if len(s)], run_cfg["data.max_sequence_length"])
    out = Path(args.out_dir or Path(args.checkpoint).parent / f"eval_{args.split}")
    out.mkdir(parents=True, exist_ok=True)
    report = evaluate(model, chosen)
    write_report(report, out, args.name or model.config.arch)
    if args.export_roc:
        write_roc(report, out)
    if args.export_hidden:
        H, Hb = model.hidden_trace(make_batch(chosen))
        if H is not None:
            write_jsonl(hidden_records(chosen, H, Hb), out / "hidden.jsonl")
    print(format_table([table_row(args.name or model.config.arch, report)]), end="")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if not Path(args.data).is_file():
        raise ConfigError(f"dataset not found: {args.data}")
    seqs = load_jsonl(args.data)
    check_feature_width(seqs, model.config.input_width)
    probs = predict_proba(model, seqs)
    records = []
    for s, p in zip(seqs, probs):
        for i in range(len(s)):
            records.append(
                {"event": s.event_id, "i": i, "label": int(np.argmax(p[i])), "proba": p[i].tolist()}
            )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(records, out)
    print(f"wrote {len(records)} predictions to {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        spec = GapTaskSpec(
            n_sequences=args.n,
            length=args.len,
            feature_width=args.feature_width,
            gamma=args.gamma,
            noise=args.noise,
        )
    except BirnodeError as exc:
        raise ConfigError(str(exc)) from None
    seqs = generate_synthetic(spec, seed=args.seed if args.seed is not None else 0)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_jsonl(seqs, out, num_classes=2)
    y = np.concatenate([s.y for s in seqs])
    gaps = np.concatenate([np.diff(np.r_[0.0, s.t]) for s in seqs])
    summary = {
        "path": str(out),
        "sequences": len(seqs),
        "posts": int(y.size),
        "gamma": spec.gamma,
        "label_balance": float(y.mean()),
        "gap_quantiles": dict(zip(["q10", "q50", "q90"], np.quantile(gaps, [0.1, 0.5, 0.9]).tolist())),
    }
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_compare(args) -> int:
    base = cfgmod.resolve(args.config, _overrides(args))
    archs = [a.strip() for a in args.archs.split(",") if a.strip()]
    if not archs:
        raise ConfigError("--archs is empty")
    out = Path(base["out_dir"])
    rows, records, failed = [], [], []
    for arch in archs:
        cfg = cfgmod.resolve(overrides={**base, "model.arch": arch, "out_dir": str(out / arch)})
        try:
            report = run_training(cfg, out / arch, name=arch)
        except NumericalError as exc:
            log.error("%s failed: %s", arch, exc)
            failed.append(arch)
            report = None
        rows.append(table_row(arch, report))
        rec = {"arch": arch, "failed": report is None}
        if report is not None:
            rec.update(
                params=report.param_count,
                auc=report.weighted_auc,
                f1=report.weighted_f1,
                recall=report.weighted_recall,
                precision=report.weighted_precision,
                accuracy=report.accuracy,
            )
        records.append(rec)
    table = format_table(rows)
    if failed:
        table += f"PARTIAL: failed runs: {', '.join(failed)}\n"
    out.mkdir(parents=True, exist_ok=True)
    (out / "compare.txt").write_text(table, encoding="utf-8")
    write_jsonl(records, out / "compare.jsonl")
    print(table, end="")
    return EXIT_NUMERIC if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="birnode", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model")
    _add_common(p)
    p.add_argument("--data", help="dataset JSONL (overrides data.path)")
    p.add_argument("--arch", help="architecture (overrides model.arch)")
    p.add_argument("--epochs", type=int, help="epochs (overrides train.epochs)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset JSONL (defaults to the training run's)")
    p.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
    p.add_argument("--name", help="row label in the table")
    p.add_argument("--export-roc", action="store_true")
    p.add_argument("--export-hidden", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="label every post of a (possibly unlabeled) dataset")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth", help="write a synthetic gap-task dataset")
    _add_common(p)
    p.add_argument("--n", type=int, default=1000, help="number of sequences")
    p.add_argument("--len", type=int, default=20, help="posts per sequence")
    p.add_argument("--feature-width", type=int, default=4)
    p.add_argument("--gamma", type=float, default=None, help="gap threshold (default: median gap)")
    p.add_argument("--noise", type=float, default=0.0, help="label flip probability")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("compare", help="train several architectures on one dataset")
    _add_common(p)
    p.add_argument("--archs", required=True, help="comma-separated architectures")
    p.add_argument("--data", help="dataset JSONL (overrides data.path)")
    p.add_argument("--epochs", type=int, help="epochs (overrides train.epochs)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (BirnodeError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
