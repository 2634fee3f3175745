"""Binary classification metrics with malicious as the positive class."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np


class LengthMismatch(ValueError):
    pass


class Empty(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(preds, truth) -> ConfusionMatrix:
    p = np.asarray(preds).astype(bool).ravel()
    t = np.asarray(truth).astype(bool).ravel()
    if p.shape != t.shape:
        raise LengthMismatch(f"{p.size} predictions vs {t.size} labels")
    if p.size == 0:
        raise Empty("nothing to evaluate")
    return ConfusionMatrix(
        tp=int(np.sum(p & t)), fp=int(np.sum(p & ~t)),
        tn=int(np.sum(~p & ~t)), fn=int(np.sum(~p & t)),
    )


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    weighted_f1: float
    per_class: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)


def _prf(tp: int, fp: int, fn: int, tag: str, flags: list[str]):
    if tp + fp == 0:
        precision = 0.0
        flags.append(f"{tag}:precision_undefined")
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall = 0.0
        flags.append(f"{tag}:recall_undefined")
    else:
        recall = tp / (tp + fn)
    if precision + recall == 0:
        f1 = 0.0
        flags.append(f"{tag}:f1_undefined")
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def metrics(cm: ConfusionMatrix) -> Metrics:
    """Accuracy, positive-class P/R/F1, and support-weighted F1 over both classes.

    Zero denominators give 0 and leave a note in ``flags``.
    """
    if cm.total <= 0:
        raise Empty("confusion matrix is empty")
    flags: list[str] = []
    p1, r1, f1_pos = _prf(cm.tp, cm.fp, cm.fn, "malicious", flags)
    # the normal class sees the matrix mirrored
    p0, r0, f1_neg = _prf(cm.tn, cm.fn, cm.fp, "normal", flags)
    support_pos, support_neg = cm.tp + cm.fn, cm.tn + cm.fp
    weighted = (support_pos * f1_pos + support_neg * f1_neg) / cm.total
    return Metrics(
        accuracy=(cm.tp + cm.tn) / cm.total,
        precision=p1,
        recall=r1,
        f1=f1_pos,
        weighted_f1=weighted,
        per_class={
            "malicious": {"precision": p1, "recall": r1, "f1": f1_pos, "support": support_pos},
            "normal": {"precision": p0, "recall": r0, "f1": f1_neg, "support": support_neg},
        },
        flags=flags,
    )


def report(cm: ConfusionMatrix) -> dict:
    m = metrics(cm)
    return {
        "counts": asdict(cm),
        "metrics": {k: getattr(m, k) for k in ("accuracy", "precision", "recall", "f1", "weighted_f1")},
        "per_class": m.per_class,
        "flags": m.flags,
    }
