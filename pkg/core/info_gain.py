"""
Information-gain feature ranking
"""
from __future__ import annotations

from typing import List, Tuple

import numpy as np
from scipy.stats import entropy

from core.dataset import LabeledDataset


def label_entropy(counts: np.ndarray) -> float:
    """Entropy in bits of a class-count vector (0 for an empty one)"""
    total = counts.sum()
    if total == 0:
        return 0.0
    return float(entropy(counts, base=2))


def _best_split_entropy(column: np.ndarray, onehot: np.ndarray) -> float:
    """Smallest conditional label entropy over midpoint thresholds of one column"""
    order = np.argsort(column, kind="stable")
    values = column[order]
    n = len(values)
    left = np.cumsum(onehot[order], axis=0)[:-1]
    right = onehot.sum(axis=0) - left
    boundaries = np.nonzero(values[:-1] < values[1:])[0]

    best = np.inf
    for b in boundaries:
        n_left = b + 1
        conditional = (n_left * label_entropy(left[b]) + (n - n_left) * label_entropy(right[b])) / n
        best = min(best, conditional)
    return best


def info_gain(data: LabeledDataset) -> List[Tuple[str, float]]:
    """
    Rank features by entropy reduction of the label

    Binary features split by presence; numeric features at the midpoint
    that minimizes conditional entropy.

    Args:
        data: Labeled rows

    Returns:
        (feature, gain in bits) sorted by descending gain, then name
    """
    data.require_rows()
    X = data.matrix()
    y = data.label_indices()
    onehot = np.zeros((len(y), len(data.label_space)))
    onehot[np.arange(len(y)), y] = 1.0
    base = label_entropy(onehot.sum(axis=0))

    gains = []
    for j, name in enumerate(data.vocabulary):
        column = X[:, j]
        if column.min() == column.max():
            gains.append((name, 0.0))
            continue
        gains.append((name, max(0.0, base - _best_split_entropy(column, onehot))))
    return sorted(gains, key=lambda item: (-item[1], item[0]))
