"""Confusion-matrix metrics and trial aggregation.

Confusion matrices are plain integer arrays with rows indexed by true class
code and columns by predicted class code. All metric values are fractions in
[0, 1]; any ratio with a zero denominator is defined as 0 so per-class
tables stay total.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

F2_BETA = 2.0  # recall weighted twice as heavily as precision

TRIAL_CSV_COLUMNS = (
    "model",
    "proportion",
    "bootstrap",
    "trial",
    "accuracy",
    "f1_F0",
    "f1_F1",
    "f1_I0",
    "f1_I1",
    "f2_F1",
)


def confusion_matrix(
    y_true: Sequence[int], y_pred: Sequence[int], n_classes: int = 4
) -> np.ndarray:
    """Count (true, predicted) pairs into an [n_classes, n_classes] matrix."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred must have equal length")
    if len(y_true) and (
        y_true.min() < 0 or y_true.max() >= n_classes or y_pred.min() < 0 or y_pred.max() >= n_classes
    ):
        raise ValueError(f"class codes must lie in [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def accuracy(cm: np.ndarray) -> float:
    total = int(cm.sum())
    if total == 0:
        raise ValueError("empty confusion matrix")
    return float(np.trace(cm)) / total


def precision_recall(cm: np.ndarray, class_code: int) -> tuple[float, float]:
    """One-vs-rest precision and recall; zero denominators give 0."""
    tp = float(cm[class_code, class_code])
    predicted = float(cm[:, class_code].sum())
    actual = float(cm[class_code, :].sum())
    precision = tp / predicted if predicted > 0 else 0.0
    recall = tp / actual if actual > 0 else 0.0
    return precision, recall


def f_beta(cm: np.ndarray, class_code: int, beta: float) -> float:
    """(1 + beta^2) * P * R / (beta^2 * P + R), or 0 when undefined."""
    if not beta > 0:
        raise ValueError("beta must be > 0")
    precision, recall = precision_recall(cm, class_code)
    denominator = beta**2 * precision + recall
    if denominator == 0:
        return 0.0
    return (1.0 + beta**2) * precision * recall / denominator


@dataclass
class ClassMetrics:
    """Per-class precision/recall/F1/F_beta arrays, indexed by class code."""

    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    f_beta: np.ndarray
    beta: float


def class_metrics(cm: np.ndarray, beta: float = F2_BETA) -> ClassMetrics:
    n = cm.shape[0]
    precision = np.zeros(n)
    recall = np.zeros(n)
    f1 = np.zeros(n)
    fb = np.zeros(n)
    for code in range(n):
        precision[code], recall[code] = precision_recall(cm, code)
        f1[code] = f_beta(cm, code, 1.0)
        fb[code] = f_beta(cm, code, beta)
    return ClassMetrics(precision=precision, recall=recall, f1=f1, f_beta=fb, beta=beta)


@dataclass
class TrialAggregate:
    """Mean and sample standard deviation of one metric across trials."""

    mean: float
    std: float | None  # None with a single trial (n-1 divisor undefined)
    count: int


def aggregate(trial_values: Sequence[float]) -> TrialAggregate:
    values = np.asarray(trial_values, dtype=float)
    if len(values) == 0:
        raise ValueError("aggregate needs at least one value")
    std = float(values.std(ddof=1)) if len(values) >= 2 else None
    return TrialAggregate(mean=float(values.mean()), std=std, count=len(values))
