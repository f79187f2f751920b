"""
Bernoulli naive Bayes
"""
from __future__ import annotations

from typing import Any, Dict

import numpy as np
from scipy.special import logsumexp

from core.dataset import LabeledDataset
from core.models import Classifier, register_model
from utils.errors import DataError
from utils.logger import get_logger

logger = get_logger(__name__)


@register_model
class NBModel(Classifier):
    """Bernoulli naive Bayes; a feature counts as present when its value is positive"""

    algorithm = "naive_bayes"

    def __init__(self, label_space, vocabulary, hyperparameters, class_log_prior, feature_log_prob, feature_log_neg):
        super().__init__(label_space, vocabulary, hyperparameters)
        self.class_log_prior = np.asarray(class_log_prior, dtype=float)
        self.feature_log_prob = np.asarray(feature_log_prob, dtype=float).reshape(len(self.label_space), -1)
        self.feature_log_neg = np.asarray(feature_log_neg, dtype=float).reshape(len(self.label_space), -1)

    def joint_log_likelihood(self, X: np.ndarray) -> np.ndarray:
        present = (X > 0).astype(float)
        return (
            self.class_log_prior
            + present @ (self.feature_log_prob - self.feature_log_neg).T
            + self.feature_log_neg.sum(axis=1)
        )

    def score_matrix(self, X: np.ndarray) -> np.ndarray:
        """Posterior class probabilities"""
        joint = self.joint_log_likelihood(X)
        return np.exp(joint - logsumexp(joint, axis=1, keepdims=True))

    def parameters(self) -> Dict[str, Any]:
        return {
            "class_log_prior": self.class_log_prior.tolist(),
            "feature_log_prob": self.feature_log_prob.tolist(),
            "feature_log_neg": self.feature_log_neg.tolist(),
        }

    @classmethod
    def from_parameters(cls, label_space, vocabulary, hyperparameters, parameters) -> NBModel:
        return cls(label_space, vocabulary, hyperparameters, **parameters)


def train_naive_bayes(data: LabeledDataset, smoothing: float = 1.0) -> NBModel:
    """
    Fit Bernoulli naive Bayes with Laplace smoothing

    P(f | c) = (count(f, c) + smoothing) / (count(c) + 2 * smoothing)

    Args:
        data: Training rows, at least one per class in the label space
        smoothing: Laplace smoothing constant (> 0)

    Returns:
        NBModel
    """
    data.require_rows()
    if smoothing <= 0:
        raise DataError(f"smoothing must be positive, got {smoothing}")
    counts = data.class_counts()
    empty = [label for label, count in counts.items() if count == 0]
    if empty:
        raise DataError(f"Naive Bayes needs at least one row per class; empty: {empty}")

    X = (data.matrix() > 0).astype(float)
    y = data.label_indices()
    n_classes = len(data.label_space)

    class_count = np.bincount(y, minlength=n_classes).astype(float)
    feature_count = np.zeros((n_classes, X.shape[1]))
    for c in range(n_classes):
        feature_count[c] = X[y == c].sum(axis=0)

    prob = (feature_count + smoothing) / (class_count[:, None] + 2.0 * smoothing)
    model = NBModel(
        data.label_space,
        data.vocabulary,
        {"smoothing": smoothing},
        class_log_prior=np.log(class_count / class_count.sum()),
        feature_log_prob=np.log(prob),
        feature_log_neg=np.log1p(-prob),
    )
    logger.debug(f"Trained naive Bayes on {len(data)} rows x {len(data.vocabulary)} features")
    return model
