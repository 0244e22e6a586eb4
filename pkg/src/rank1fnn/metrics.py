"""Classification metrics on 0-based integer labels."""
from __future__ import annotations

import numpy as np


def accuracy(predicted, labels) -> float:
    predicted, labels = np.asarray(predicted), np.asarray(labels)
    if labels.size == 0:
        return float("nan")
    return float(np.mean(predicted == labels))


def confusion_matrix(predicted, labels, n_classes: int) -> np.ndarray:
    """``out[true, predicted]`` counts."""
    out = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(out, (np.asarray(labels), np.asarray(predicted)), 1)
    return out


def per_class_accuracy(confusion: np.ndarray) -> np.ndarray:
    """Recall per true class; NaN for classes with no samples."""
    counts = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.diag(confusion) / counts
