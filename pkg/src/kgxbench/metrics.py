"""Aggregation of per-item FSV scores into experiment-level metrics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

LABELS = (-1, 0, 1)


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f_beta: float


@dataclass(frozen=True)
class ClassificationReport:
    per_class: Mapping[int, ClassMetrics]
    accuracy: float
    beta: float

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "beta": self.beta,
            "per_class": {
                str(label): {
                    "precision": m.precision,
                    "recall": m.recall,
                    "f_beta": m.f_beta,
                }
                for label, m in sorted(self.per_class.items())
            },
        }


def _as_labels(values: Iterable[int], name: str) -> list[int]:
    out = []
    for v in values:
        if v not in LABELS:
            raise ValueError(f"{name} contains {v!r}, expected one of {LABELS}")
        out.append(int(v))
    return out


def classification_report(predicted, gold, beta: float = 1.0) -> ClassificationReport:
    """Per-class precision/recall/F-beta and accuracy over the labels {-1, 0, 1}.

    Classes with no predicted instances get precision 0; classes with no gold
    instances get recall 0; F is 0 when precision and recall are both 0.
    """
    pred = _as_labels(predicted, "predicted")
    ref = _as_labels(gold, "gold")
    if not pred or len(pred) != len(ref):
        raise ValueError("predicted and gold vectors must be non-empty and of equal length")
    if beta <= 0:
        raise ValueError("beta must be positive")
    confusion: dict[tuple[int, int], int] = {}
    for g, p in zip(ref, pred):
        confusion[(g, p)] = confusion.get((g, p), 0) + 1
    per_class = {}
    correct = 0
    for label in LABELS:
        tp = confusion.get((label, label), 0)
        predicted_count = sum(confusion.get((g, label), 0) for g in LABELS)
        gold_count = sum(confusion.get((label, p), 0) for p in LABELS)
        precision = tp / predicted_count if predicted_count else 0.0
        recall = tp / gold_count if gold_count else 0.0
        denom = beta * beta * precision + recall
        f_beta = (1 + beta * beta) * precision * recall / denom if denom else 0.0
        per_class[label] = ClassMetrics(precision, recall, f_beta)
        correct += tp
    return ClassificationReport(per_class, correct / len(pred), beta)


def average_fsv(values) -> float:
    """Arithmetic mean of the FSV values; ranges in [-1, 1]."""
    labels = _as_labels(values, "values")
    if not labels:
        raise ValueError("cannot average an empty FSV vector")
    return sum(labels) / len(labels)


def fsv_distribution(values) -> dict[int, float]:
    """Relative frequency of each label; absent labels are reported as 0."""
    labels = _as_labels(values, "values")
    if not labels:
        raise ValueError("cannot compute the distribution of an empty FSV vector")
    return {label: labels.count(label) / len(labels) for label in LABELS}
