"""
Random forest of CART trees with Gini splits
"""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Union

import numpy as np

from core.dataset import LabeledDataset
from core.models import Classifier, register_model
from utils.errors import DataError
from utils.logger import get_logger

logger = get_logger(__name__)

LEAF = -1
_TIE_EPS = 1e-12


@dataclass(frozen=True)
class ForestConfig:
    """
    Forest hyperparameters

    max_features: "sqrt" (ceil of the square root of the vocabulary size),
    "all", or an integer. bootstrap: "index" (resample rows by position),
    "row-hash" (per-row multiplicity derived from the row content, so row
    order does not matter) or "none".
    """
    n_trees: int = 100
    max_depth: Optional[int] = None
    min_leaf: int = 1
    seed: int = 1337
    max_features: Union[str, int] = "sqrt"
    bootstrap: str = "index"


@dataclass
class DecisionTree:
    """Flat array tree; leaves hold class histograms of their training weight"""
    feature: List[int]
    threshold: List[float]
    left: List[int]
    right: List[int]
    value: List[List[float]]
    seed: int

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row"""
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        nodes = np.zeros(X.shape[0], dtype=int)
        active = feature[nodes] != LEAF
        while active.any():
            rows = np.nonzero(active)[0]
            current = nodes[rows]
            go_left = X[rows, feature[current]] <= threshold[current]
            nodes[rows] = np.where(go_left, left[current], right[current])
            active = feature[nodes] != LEAF
        return nodes

    def histograms(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.value, dtype=float)[self.apply(X)]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _candidate_count(max_features: Union[str, int], n_features: int) -> int:
    if max_features == "sqrt":
        return max(1, math.ceil(math.sqrt(n_features)))
    if max_features in ("all", None):
        return n_features
    return max(1, min(int(max_features), n_features))


def _gini_split(column: np.ndarray, onehot: np.ndarray, parent: np.ndarray, min_leaf: int):
    """Best threshold on one feature: (weighted child impurity, threshold) or None"""
    order = np.argsort(column, kind="stable")
    values = column[order]
    if values[0] == values[-1]:
        return None
    left = np.cumsum(onehot[order], axis=0)[:-1]
    right = parent - left
    n_left = left.sum(axis=1)
    n_right = right.sum(axis=1)
    valid = (values[:-1] < values[1:]) & (n_left >= min_leaf) & (n_right >= min_leaf) & (n_left > 0) & (n_right > 0)
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        gini_left = 1.0 - np.sum((left / n_left[:, None]) ** 2, axis=1)
        gini_right = 1.0 - np.sum((right / n_right[:, None]) ** 2, axis=1)
    impurity = (n_left * gini_left + n_right * gini_right) / parent.sum()
    impurity = np.where(valid, impurity, np.inf)
    best = int(np.argmin(impurity))
    return float(impurity[best]), float((values[best] + values[best + 1]) / 2.0)


def build_tree(
    X: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray,
    n_classes: int,
    config: ForestConfig,
    seed: int
) -> DecisionTree:
    """
    Grow one CART tree on weighted rows

    Nodes are expanded depth-first, left child first; each node draws a
    random feature order and evaluates features until the candidate budget
    of non-constant features is spent.

    Args:
        X: Dense features
        y: Class indices
        weights: Integer row multiplicities (bootstrap counts)
        n_classes: Size of the label space
        config: Forest hyperparameters
        seed: Tree seed

    Returns:
        DecisionTree
    """
    rng = np.random.default_rng(seed)
    keep = weights > 0
    X, y, weights = X[keep], y[keep], weights[keep].astype(float)
    onehot = np.zeros((len(y), n_classes))
    onehot[np.arange(len(y)), y] = weights
    budget = _candidate_count(config.max_features, X.shape[1])

    tree = DecisionTree(feature=[], threshold=[], left=[], right=[], value=[], seed=seed)

    def new_node(rows: np.ndarray) -> int:
        tree.feature.append(LEAF)
        tree.threshold.append(0.0)
        tree.left.append(LEAF)
        tree.right.append(LEAF)
        tree.value.append(onehot[rows].sum(axis=0).tolist())
        return len(tree.feature) - 1

    root_rows = np.arange(len(y))
    stack = [(new_node(root_rows), root_rows, 0)]
    while stack:
        node, rows, depth = stack.pop()
        parent = onehot[rows].sum(axis=0)
        total = parent.sum()
        if (
            np.count_nonzero(parent) <= 1
            or (config.max_depth is not None and depth >= config.max_depth)
            or total < 2 * config.min_leaf
        ):
            continue

        candidates = []
        for feature in rng.permutation(X.shape[1]):
            column = X[rows, feature]
            if column.min() == column.max():
                continue
            result = _gini_split(column, onehot[rows], parent, config.min_leaf)
            if result is not None:
                candidates.append((result[0], int(feature), result[1]))
            if len(candidates) >= budget:
                break
        if not candidates:
            continue
        # near-equal impurities resolve to the lowest feature index
        lowest = min(c[0] for c in candidates)
        tied = [c for c in candidates if c[0] <= lowest + _TIE_EPS]
        _, best_feature, best_threshold = min(tied, key=lambda c: c[1])

        goes_left = X[rows, best_feature] <= best_threshold
        left_rows, right_rows = rows[goes_left], rows[~goes_left]
        left_node, right_node = new_node(left_rows), new_node(right_rows)
        tree.feature[node] = best_feature
        tree.threshold[node] = best_threshold
        tree.left[node] = left_node
        tree.right[node] = right_node
        # right pushed first so the left subtree is grown first
        stack.append((right_node, right_rows, depth + 1))
        stack.append((left_node, left_rows, depth + 1))
    return tree


def _row_hash_weights(data: LabeledDataset, seed: int) -> np.ndarray:
    weights = np.zeros(len(data), dtype=int)
    for i, (features, label) in enumerate(data.rows):
        text = json.dumps([seed, sorted(features.items()), label])
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        weights[i] = np.random.default_rng(int.from_bytes(digest[:8], "big")).poisson(1.0)
    return weights


@register_model
class RFModel(Classifier):
    """Forest prediction sums leaf histograms across trees"""

    algorithm = "random_forest"

    def __init__(self, label_space, vocabulary, hyperparameters, trees, oob_score=None):
        super().__init__(label_space, vocabulary, hyperparameters)
        self.trees = [t if isinstance(t, DecisionTree) else DecisionTree(**t) for t in trees]
        self.oob_score = oob_score

    def summed_histograms(self, X: np.ndarray) -> np.ndarray:
        total = np.zeros((X.shape[0], len(self.label_space)))
        for tree in self.trees:
            total += tree.histograms(X)
        return total

    def score_matrix(self, X: np.ndarray) -> np.ndarray:
        total = self.summed_histograms(X)
        sums = total.sum(axis=1, keepdims=True)
        sums[sums == 0] = 1.0
        return total / sums

    def parameters(self) -> Dict[str, Any]:
        return {"trees": [t.to_dict() for t in self.trees], "oob_score": self.oob_score}

    @classmethod
    def from_parameters(cls, label_space, vocabulary, hyperparameters, parameters) -> RFModel:
        return cls(label_space, vocabulary, hyperparameters, **parameters)


def train_random_forest(data: LabeledDataset, config: ForestConfig = ForestConfig(), jobs: int = 1) -> RFModel:
    """
    Fit a random forest

    Trees use per-tree seeds spawned from config.seed, so results do not
    depend on jobs.

    Args:
        data: Training rows
        config: Forest hyperparameters
        jobs: Trees grown in parallel

    Returns:
        RFModel (with out-of-bag accuracy when bootstrapping by index)
    """
    data.require_rows()
    if config.n_trees < 1:
        raise DataError("n_trees must be at least 1")
    if config.bootstrap not in ("index", "row-hash", "none"):
        raise DataError(f"Unknown bootstrap mode {config.bootstrap!r}")

    data = data.canonical()
    X = data.matrix()
    y = data.label_indices()
    n_classes = len(data.label_space)
    tree_seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(config.seed).spawn(config.n_trees)]

    def sample_weights(tree_seed: int) -> np.ndarray:
        if config.bootstrap == "none":
            return np.ones(len(data), dtype=int)
        if config.bootstrap == "row-hash":
            return _row_hash_weights(data, tree_seed)
        rng = np.random.default_rng([tree_seed, 0])
        return np.bincount(rng.integers(0, len(data), len(data)), minlength=len(data))

    def grow(tree_seed: int):
        weights = sample_weights(tree_seed)
        return build_tree(X, y, weights, n_classes, config, tree_seed), weights

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        grown = list(pool.map(grow, tree_seeds))

    oob_score = None
    if config.bootstrap == "index":
        votes = np.zeros((len(data), n_classes))
        for tree, weights in grown:
            out = weights == 0
            if out.any():
                votes[out] += tree.histograms(X[out])
        voted = votes.sum(axis=1) > 0
        if voted.any():
            oob_score = float(np.mean(np.argmax(votes[voted], axis=1) == y[voted]))

    model = RFModel(data.label_space, data.vocabulary, asdict(config), [tree for tree, _ in grown], oob_score)
    logger.debug(f"Trained random forest: {config.n_trees} trees on {len(data)} rows, oob={oob_score}")
    return model
