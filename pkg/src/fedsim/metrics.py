"""Confusion-matrix metrics: accuracy, micro/macro F1, per-language views.

Any precision, recall or F1 whose denominator is zero counts as 0, and
classes with no support still enter the macro average.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .model import ParameterVector, featurize, logits, stack


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """``counts[t, p]`` = number of examples of true class t predicted as p."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"confusion matrix must be square, got shape {c.shape}")
        if np.any(c < 0):
            raise ValueError("confusion matrix has negative counts")
        object.__setattr__(self, "counts", c)

    @classmethod
    def from_labels(cls, true, pred, num_classes: int) -> "ConfusionMatrix":
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(true, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
        return cls(counts)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class Metrics:
    accuracy: float
    micro_f1: float
    macro_f1: float
    per_class_f1: list[float]
    support: list[int]
    confusion: list[list[int]] | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "per_class_f1": list(self.per_class_f1),
            "support": list(self.support),
            "confusion": self.confusion,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Metrics":
        return cls(
            accuracy=d["accuracy"],
            micro_f1=d["micro_f1"],
            macro_f1=d["macro_f1"],
            per_class_f1=list(d["per_class_f1"]),
            support=list(d["support"]),
            confusion=d.get("confusion"),
        )


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def accuracy(cm: ConfusionMatrix) -> float:
    return _ratio(int(np.trace(cm.counts)), cm.total)


def per_class_f1(cm: ConfusionMatrix) -> list[float]:
    # 2PR/(P+R) rewritten as 2TP/(2TP+FP+FN): one rounding, same value
    tp = np.diag(cm.counts)
    fp = cm.counts.sum(axis=0) - tp
    fn = cm.counts.sum(axis=1) - tp
    return [_ratio(2 * int(t), 2 * int(t) + int(p) + int(n)) for t, p, n in zip(tp, fp, fn)]


def macro_f1(cm: ConfusionMatrix) -> float:
    scores = per_class_f1(cm)
    return math.fsum(scores) / len(scores)


def micro_f1(cm: ConfusionMatrix) -> float:
    tp = int(np.trace(cm.counts))
    wrong = cm.total - tp  # every miss is one FP and one FN
    return _ratio(2 * tp, 2 * tp + 2 * wrong)


def metrics_from_confusion(cm: ConfusionMatrix, keep_confusion: bool = True) -> Metrics:
    return Metrics(
        accuracy=accuracy(cm),
        micro_f1=micro_f1(cm),
        macro_f1=macro_f1(cm),
        per_class_f1=per_class_f1(cm),
        support=[int(s) for s in cm.counts.sum(axis=1)],
        confusion=cm.counts.tolist() if keep_confusion else None,
    )


def predictions(params: ParameterVector, data: Dataset) -> np.ndarray:
    """Argmax class per example; ``np.argmax`` resolves ties to the lowest index."""
    X = stack([featurize(ex.text, params.dim) for ex in data.examples], params.dim)
    return np.argmax(logits(params, X), axis=1)


def evaluate(params: ParameterVector, data: Dataset) -> ConfusionMatrix:
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if data.num_classes != params.classes:
        raise ValueError(f"dataset has {data.num_classes} classes, model has {params.classes}")
    true = [ex.label for ex in data.examples]
    return ConfusionMatrix.from_labels(true, predictions(params, data), params.classes)


def evaluate_metrics(params: ParameterVector, data: Dataset) -> Metrics:
    return metrics_from_confusion(evaluate(params, data))


def per_language_eval(params: ParameterVector, data: Dataset) -> dict[str, Metrics]:
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    pred = predictions(params, data)
    out = {}
    for lang in sorted(data.languages):
        mask = [i for i, ex in enumerate(data.examples) if ex.language == lang]
        true = [data.examples[i].label for i in mask]
        cm = ConfusionMatrix.from_labels(true, pred[mask], params.classes)
        out[lang] = metrics_from_confusion(cm)
    return out
