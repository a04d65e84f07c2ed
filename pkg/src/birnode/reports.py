"""Writers for line-delimited reports, comparison tables, ROC tables and traces."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .metrics import EvalReport

TABLE_COLUMNS = ("Model", "Params", "AUC", "F1", "Recall", "Precision")


def write_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.3f}"
    return str(v)


def table_row(name: str, report: EvalReport | None) -> list[str]:
    if report is None:
        return [name, "FAILED", "", "", "", ""]
    return [
        name,
        _fmt(report.param_count),
        _fmt(report.weighted_auc),
        _fmt(report.weighted_f1),
        _fmt(report.weighted_recall),
        _fmt(report.weighted_precision),
    ]


def format_table(rows: list[list[str]]) -> str:
    """Left-aligned text table under the standard metric header."""
    rows = [list(TABLE_COLUMNS)] + rows
    widths = [max(len(r[i]) for r in rows) for i in range(len(TABLE_COLUMNS))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, out_dir, name: str) -> None:
    out = Path(out_dir)
    write_jsonl(report.records(), out / "report.jsonl")
    (out / "report.txt").write_text(format_table([table_row(name, report)]), encoding="utf-8")


def write_roc(report: EvalReport, out_dir) -> list[Path]:
    """One ``roc_class<k>.csv`` (fpr,tpr) per class with a defined curve."""
    paths = []
    for c, (fpr, tpr) in sorted(report.roc.items()):
        p = Path(out_dir) / f"roc_class{c}.csv"
        np.savetxt(p, np.column_stack([fpr, tpr]), delimiter=",", header="fpr,tpr", comments="", fmt="%.17g")
        paths.append(p)
    return paths


def hidden_records(seqs, H, Hb):
    for b, s in enumerate(seqs):
        for i in range(len(s)):
            rec = {"event": s.event_id, "i": i, "h": H[b, i].tolist()}
            if Hb is not None:
                rec["h_b"] = Hb[b, i].tolist()
            if s.y is not None:
                rec["y"] = int(s.y[i])
            yield rec
