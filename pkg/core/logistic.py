"""
One-vs-rest logistic regression fit by full-batch gradient descent
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Dict, Tuple

import numpy as np
from scipy.special import expit

from core.dataset import LabeledDataset
from core.models import Classifier, register_model
from utils.errors import DataError, TrainingError
from utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class LogisticConfig:
    learning_rate: float = 0.1
    epochs: int = 500
    l2: float = 1e-4


def log_loss_and_gradient(
    weights: np.ndarray,
    bias: float,
    X: np.ndarray,
    y: np.ndarray,
    l2: float
) -> Tuple[float, np.ndarray, float]:
    """
    Mean log loss with an L2 penalty on the weights (bias unpenalized)

    Args:
        weights: Weight vector
        bias: Intercept
        X: Design matrix
        y: 0/1 targets
        l2: Penalty strength

    Returns:
        (loss, gradient wrt weights, gradient wrt bias)
    """
    z = X @ weights + bias
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * weights @ weights)
    residual = expit(z) - y
    grad_w = X.T @ residual / len(y) + l2 * weights
    grad_b = float(residual.mean())
    return loss, grad_w, grad_b


@register_model
class LRModel(Classifier):
    """One sigmoid head per class; inputs divided by per-feature training scale"""

    algorithm = "logistic_regression"

    def __init__(self, label_space, vocabulary, hyperparameters, weights, bias, scale):
        super().__init__(label_space, vocabulary, hyperparameters)
        self.weights = np.asarray(weights, dtype=float).reshape(len(self.label_space), -1)
        self.bias = np.asarray(bias, dtype=float)
        self.scale = np.asarray(scale, dtype=float)

    def score_matrix(self, X: np.ndarray) -> np.ndarray:
        return expit((X / self.scale) @ self.weights.T + self.bias)

    def parameters(self) -> Dict[str, Any]:
        return {"weights": self.weights.tolist(), "bias": self.bias.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_parameters(cls, label_space, vocabulary, hyperparameters, parameters) -> LRModel:
        return cls(label_space, vocabulary, hyperparameters, **parameters)


def _fit_head(X: np.ndarray, y: np.ndarray, config: LogisticConfig, label: str) -> Tuple[np.ndarray, float]:
    weights = np.zeros(X.shape[1])
    bias = 0.0
    for epoch in range(config.epochs):
        loss, grad_w, grad_b = log_loss_and_gradient(weights, bias, X, y, config.l2)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad_w)):
            raise TrainingError(
                f"Non-finite loss while fitting logistic head {label!r}",
                diagnostics={"label": label, "epoch": epoch, "loss": loss, "learning_rate": config.learning_rate},
            )
        weights = weights - config.learning_rate * grad_w
        bias = bias - config.learning_rate * grad_b
    return weights, bias


def train_logistic(data: LabeledDataset, config: LogisticConfig = LogisticConfig(), jobs: int = 1) -> LRModel:
    """
    Fit one-vs-rest logistic regression

    Args:
        data: Training rows covering at least two classes
        config: learning_rate, epochs, l2
        jobs: Heads fitted in parallel

    Returns:
        LRModel
    """
    data.require_rows()
    if len(data.label_space) < 2:
        raise DataError("Logistic regression needs at least two classes")

    X = data.matrix()
    scale = np.abs(X).max(axis=0) if X.size else np.ones(X.shape[1])
    scale[scale == 0] = 1.0
    X = X / scale
    y = data.label_indices()

    def fit(c: int):
        return _fit_head(X, (y == c).astype(float), config, data.label_space[c])

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        heads = list(pool.map(fit, range(len(data.label_space))))

    model = LRModel(
        data.label_space,
        data.vocabulary,
        asdict(config),
        weights=np.vstack([w for w, _ in heads]) if heads else np.zeros((0, X.shape[1])),
        bias=np.array([b for _, b in heads]),
        scale=scale,
    )
    logger.debug(f"Trained logistic regression on {len(data)} rows, {config.epochs} epochs")
    return model
