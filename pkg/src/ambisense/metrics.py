"""Per-class precision / recall / F1 and confusion matrices."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .labels import SENSED_LABELS


@dataclass(frozen=True)
class ClassScore:
    label: str
    precision: float
    recall: float
    f1: float
    support: int
    undefined: bool = False  # no instances and no predictions


@dataclass(frozen=True)
class Metrics:
    per_class: tuple[ClassScore, ...]
    confusion: np.ndarray = field(compare=False)  # rows = truth, cols = prediction

    @property
    def labels(self) -> list[str]:
        return [c.label for c in self.per_class]

    def _defined(self) -> list[ClassScore]:
        return [c for c in self.per_class if not c.undefined]

    @property
    def macro_precision(self) -> float:
        d = self._defined()
        return float(np.mean([c.precision for c in d])) if d else 0.0

    @property
    def macro_recall(self) -> float:
        d = self._defined()
        return float(np.mean([c.recall for c in d])) if d else 0.0

    @property
    def macro_f1(self) -> float:
        d = self._defined()
        return float(np.mean([c.f1 for c in d])) if d else 0.0

    @property
    def accuracy(self) -> float:
        total = self.confusion.sum()
        return float(np.trace(self.confusion) / total) if total else 0.0

    def __getitem__(self, label: str) -> ClassScore:
        for c in self.per_class:
            if c.label == label:
                return c
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {
            "labels": self.labels,
            "per_class": [
                {
                    "label": c.label,
                    "precision": c.precision,
                    "recall": c.recall,
                    "f1": c.f1,
                    "support": c.support,
                    "undefined": c.undefined,
                }
                for c in self.per_class
            ],
            "macro": {"precision": self.macro_precision, "recall": self.macro_recall, "f1": self.macro_f1},
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "Metrics":
        scores = tuple(ClassScore(**row) for row in doc["per_class"])
        return cls(scores, np.array(doc["confusion"], dtype=np.int64))

    @classmethod
    def from_json(cls, text: str) -> "Metrics":
        return cls.from_dict(json.loads(text))

    def table(self) -> str:
        """Fixed-width table: activity, F1, precision, recall (two decimals)."""
        width = max(len("Activity Name"), *(len(c.label) for c in self.per_class))
        lines = [f"{'Activity Name':<{width}}  {'F1':>5}  {'Precision':>9}  {'Recall':>6}"]
        for c in self.per_class:
            flag = "  (no data)" if c.undefined else ""
            lines.append(f"{c.label:<{width}}  {c.f1:5.2f}  {c.precision:9.2f}  {c.recall:6.2f}{flag}")
        lines.append(
            f"{'macro':<{width}}  {self.macro_f1:5.2f}  {self.macro_precision:9.2f}  {self.macro_recall:6.2f}"
        )
        return "\n".join(lines)


def score_from_counts(tp: int, fp: int, fn: int, label: str = "", support: int | None = None) -> ClassScore:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    support = tp + fn if support is None else support
    return ClassScore(label, precision, recall, f1, support, undefined=(tp + fp + fn == 0))


def confusion_matrix(y_true: Sequence[int], y_pred: Sequence[int], n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def metrics_from_confusion(cm: np.ndarray, labels: Sequence[str] = SENSED_LABELS) -> Metrics:
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    scores = tuple(
        score_from_counts(int(tp[k]), int(fp[k]), int(fn[k]), labels[k], int(cm[k].sum())) for k in range(len(labels))
    )
    return Metrics(scores, cm)


def compute_metrics(y_true: Sequence[int], y_pred: Sequence[int], labels: Sequence[str] = SENSED_LABELS) -> Metrics:
    return metrics_from_confusion(confusion_matrix(y_true, y_pred, len(labels)), labels)
