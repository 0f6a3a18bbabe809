"""Evaluation metrics: accuracy and macro one-vs-rest AUROC."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, UndefinedMetricError


@dataclass
class EvalReport:
    accuracy: float
    auroc: float
    per_class_auroc: list[float | None]
    confusion_matrix: list[list[int]]
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "auroc": self.auroc,
            "per_class_auroc": self.per_class_auroc,
            "confusion_matrix": self.confusion_matrix,
            "n_samples": self.n_samples,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if len(preds) == 0:
        raise ContractError("accuracy: empty input")
    if len(preds) != len(labels):
        raise ContractError(f"accuracy: {len(preds)} predictions vs {len(labels)} labels")
    return float((preds == labels).mean())


def _midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their group."""
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=np.float64)
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc_binary(scores, labels) -> float:
    """Rank-based AUROC; equals P(score+ > score-) + 0.5 P(tie)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUROC undefined: {n_pos} positive and {n_neg} negative labels")
    ranks = _midranks(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auroc_macro(probs: np.ndarray, labels) -> tuple[float, list[float | None]]:
    """Unweighted mean of per-class one-vs-rest AUROC.

    Classes absent from the labels are skipped; their slot in the returned
    per-class list is None.  If every class is degenerate the metric is
    undefined.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or len(probs) != len(labels):
        raise ContractError(f"auroc_macro: prob matrix {probs.shape} vs {len(labels)} labels")
    per_class: list[float | None] = []
    values = []
    for c in range(probs.shape[1]):
        binary = (labels == c).astype(int)
        if binary.sum() == 0 or binary.sum() == len(binary):
            per_class.append(None)
            continue
        v = auroc_binary(probs[:, c], binary)
        per_class.append(v)
        values.append(v)
    if not values:
        raise UndefinedMetricError("AUROC undefined for every class")
    return float(np.mean(values)), per_class


def evaluate_predictions(logit_rows: np.ndarray, labels, n_classes: int) -> EvalReport:
    """Full report from an n x C logit matrix; argmax ties go to the lowest index."""
    logit_rows = np.asarray(logit_rows, dtype=np.float64)
    labels = np.asarray(labels)
    preds = logit_rows.argmax(axis=1)
    shifted = logit_rows - logit_rows.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    macro, per_class = auroc_macro(probs, labels)
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(labels, preds):
        confusion[int(t), int(p)] += 1
    return EvalReport(accuracy=accuracy(preds, labels), auroc=macro,
                      per_class_auroc=per_class,
                      confusion_matrix=confusion.tolist(), n_samples=len(labels))
