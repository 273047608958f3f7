"""Evaluation metrics: masked prediction, macro F1, split-level summaries."""

from __future__ import annotations

import numpy as np

from .data import Task, full_split_batch
from .errors import UsageError
from .nn import ModelParams, forward, weighted_ce


def predict_labels(params: ModelParams, x: np.ndarray, n_classes: int) -> np.ndarray:
    """Argmax over the first n_classes logits.

    The head is padded to the dataset-wide class count; columns past a
    task's own class count are never valid predictions for it.
    """
    logits = forward(params, x)
    if n_classes < 1 or n_classes > logits.shape[1]:
        raise UsageError(f"n_classes {n_classes} outside head width {logits.shape[1]}")
    return np.argmax(logits[:, :n_classes], axis=1)


def macro_f1(true_labels: np.ndarray, predicted: np.ndarray, n_classes: int) -> float:
    """Unweighted mean of per-class F1 over classes 0..n_classes-1.

    A class with zero precision+recall mass contributes F1 = 0, so absent
    or never-predicted classes pull the average down rather than being
    skipped.
    """
    true_labels = np.asarray(true_labels)
    predicted = np.asarray(predicted)
    if true_labels.shape != predicted.shape:
        raise UsageError(
            f"label arrays must match, got {true_labels.shape} and {predicted.shape}"
        )
    total = 0.0
    for c in range(n_classes):
        tp = float(np.sum((predicted == c) & (true_labels == c)))
        fp = float(np.sum((predicted == c) & (true_labels != c)))
        fn = float(np.sum((predicted != c) & (true_labels == c)))
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        if precision + recall == 0.0:
            continue
        total += 2.0 * precision * recall / (precision + recall)
    return total / n_classes


def split_macro_f1(params: ModelParams, task: Task, split: str) -> float:
    pool = task.splits.get(split)
    predicted = predict_labels(params, task.features[pool], task.n_classes)
    return macro_f1(task.labels[pool], predicted, task.n_classes)


def evaluate_model(params: ModelParams, task: Task) -> float:
    """Macro F1 on the task's held-out test split."""
    return split_macro_f1(params, task, "test")


def split_loss(params: ModelParams, task: Task, split: str) -> float:
    """Weighted cross-entropy of one whole split, no sampling involved."""
    batch = full_split_batch(task, split)
    return weighted_ce(forward(params, batch.x), batch.y, batch.w)
