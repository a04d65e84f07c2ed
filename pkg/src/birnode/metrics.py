"""Classification metrics: support-weighted precision/recall/F1 and one-vs-rest AUC."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def per_class_prf(cm: np.ndarray):
    """Precision, recall, F1 and support per class; 0/0 is scored 0."""
    tp = np.diag(cm).astype(np.float64)
    pred = cm.sum(axis=0).astype(np.float64)
    support = cm.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred > 0, tp / pred, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    return precision, recall, f1, support


def weighted_average(values, support) -> float:
    support = np.asarray(support, dtype=np.float64)
    total = support.sum()
    return float(np.dot(values, support) / total) if total > 0 else 0.0


def roc_curve(y_binary, scores):
    """False/true positive rates at every distinct score threshold, from (0, 0)."""
    y = np.asarray(y_binary, dtype=bool)
    s = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of each run of equal scores
    cut = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tps = np.cumsum(y)[cut]
    fps = (cut + 1) - tps
    P, N = y.sum(), (~y).sum()
    tpr = np.r_[0.0, tps / P] if P else np.r_[0.0, np.zeros(len(cut))]
    fpr = np.r_[0.0, fps / N] if N else np.r_[0.0, np.zeros(len(cut))]
    return fpr, tpr


def auc_trapezoid(fpr, tpr) -> float:
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def argmax_lowest(scores: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties resolve to the lowest class index."""
    return np.argmax(scores, axis=-1)


@dataclass
class EvalReport:
    num_classes: int
    n: int
    precision: list
    recall: list
    f1: list
    support: list
    auc: list
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    weighted_auc: float | None
    accuracy: float
    confusion: list
    roc: dict = field(default_factory=dict)
    auc_excluded: list = field(default_factory=list)
    param_count: int | None = None

    def records(self) -> list[dict]:
        """Line-delimited form of the report."""
        out = [
            {
                "kind": "summary",
                "n": self.n,
                "num_classes": self.num_classes,
                "accuracy": self.accuracy,
                "weighted_precision": self.weighted_precision,
                "weighted_recall": self.weighted_recall,
                "weighted_f1": self.weighted_f1,
                "weighted_auc": self.weighted_auc,
                "auc_excluded": list(self.auc_excluded),
                "param_count": self.param_count,
            }
        ]
        for c in range(self.num_classes):
            out.append(
                {
                    "kind": "class",
                    "class": c,
                    "precision": self.precision[c],
                    "recall": self.recall[c],
                    "f1": self.f1[c],
                    "support": self.support[c],
                    "auc": self.auc[c],
                }
            )
        for c, row in enumerate(self.confusion):
            out.append({"kind": "confusion", "true": c, "counts": row})
        return out


def classification_report(y_true, scores, num_classes: int, param_count=None) -> EvalReport:
    """Score ``(n, classes)`` probabilities against integer labels."""
    y_true = np.asarray(y_true, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if y_true.size == 0:
        raise ValueError("classification_report: empty evaluation set")
    y_pred = argmax_lowest(scores)
    cm = confusion_matrix(y_true, y_pred, num_classes)
    precision, recall, f1, support = per_class_prf(cm)
    aucs: list = []
    roc = {}
    excluded = []
    for c in range(num_classes):
        pos = y_true == c
        if pos.all() or not pos.any():
            aucs.append(None)
            excluded.append(c)
            continue
        fpr, tpr = roc_curve(pos, scores[:, c])
        roc[c] = (fpr, tpr)
        aucs.append(auc_trapezoid(fpr, tpr))
    kept = [c for c in range(num_classes) if aucs[c] is not None]
    weighted_auc = (
        weighted_average([aucs[c] for c in kept], support[kept]) if kept else None
    )
    return EvalReport(
        num_classes=num_classes,
        n=int(y_true.size),
        precision=precision.tolist(),
        recall=recall.tolist(),
        f1=f1.tolist(),
        support=support.tolist(),
        auc=aucs,
        weighted_precision=weighted_average(precision, support),
        weighted_recall=weighted_average(recall, support),
        weighted_f1=weighted_average(f1, support),
        weighted_auc=weighted_auc,
        accuracy=float(np.trace(cm) / cm.sum()),
        confusion=cm.tolist(),
        roc=roc,
        auc_excluded=excluded,
        param_count=param_count,
    )
