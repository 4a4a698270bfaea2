"""Classification metrics built from the confusion matrix."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ArgumentError


@dataclass
class ClassifierReport:
    classes: list
    precision: dict
    recall: dict
    f1: dict
    support: dict
    macro_f1: float
    weighted_f1: float
    confusion: list  # rows = truth, columns = prediction, in ``classes`` order
    trainables: int | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "classes": list(self.classes), "precision": dict(self.precision), "recall": dict(self.recall),
            "f1": dict(self.f1), "support": dict(self.support), "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1, "confusion": [list(r) for r in self.confusion],
            "trainables": self.trainables, **({"extra": self.extra} if self.extra else {}),
        }


def _ratio(num, den):
    return float(num) / float(den) if den else 0.0


def confusion_matrix(predictions, truth, classes):
    index = {c: i for i, c in enumerate(classes)}
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, t in zip(predictions, truth):
        cm[index[t], index[p]] += 1
    return cm


def f1_scores(predictions, truth, trainables=None):
    """Per-class precision/recall/F1 plus macro and weighted F1.

    Classes are those seen in ``truth`` or ``predictions`` (sorted); a class
    absent from both never enters the macro average.  Weighted F1 weights
    each class by its support in ``truth``.
    """
    predictions, truth = list(predictions), list(truth)
    if len(predictions) != len(truth):
        raise ArgumentError(f"{len(predictions)} predictions for {len(truth)} labels")
    if not truth:
        raise ArgumentError("cannot score an empty label sequence")
    classes = sorted(set(truth) | set(predictions), key=str)
    cm = confusion_matrix(predictions, truth, classes)
    tp = np.diag(cm)
    pred_tot, true_tot = cm.sum(axis=0), cm.sum(axis=1)
    precision, recall, f1, support = {}, {}, {}, {}
    for i, c in enumerate(classes):
        p = _ratio(tp[i], pred_tot[i])
        r = _ratio(tp[i], true_tot[i])
        precision[c], recall[c] = p, r
        f1[c] = _ratio(2 * tp[i], pred_tot[i] + true_tot[i])
        support[c] = int(true_tot[i])
    macro = float(np.mean([f1[c] for c in classes]))
    weighted = float(sum(f1[c] * support[c] for c in classes) / len(truth))
    return ClassifierReport(classes, precision, recall, f1, support, macro, weighted, cm.tolist(), trainables)
