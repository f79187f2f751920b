"""
One-class SVM (nu formulation) with a Gaussian RBF kernel

With K(x, x) = 1 the nu-one-class dual and Support Vector Data
Description share their solution, so this model serves as both.

Dual problem solved by SMO:
    min_alpha  0.5 * alpha' K alpha
    s.t.       0 <= alpha_i <= 1 / (nu * n),  sum_i alpha_i = 1
Working pairs are chosen with second-order information.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from core.dataset import vectorize, vectorize_many
from core.models import Prediction
from utils.errors import ConvergenceError, DataError
from utils.logger import get_logger

logger = get_logger(__name__)

_TAU = 1e-12


@dataclass(frozen=True)
class OcsvmConfig:
    nu: float = 0.1
    gamma: Optional[float] = None  # None -> 1 / vocabulary size
    tol: float = 1e-6
    max_iter: int = 100_000


@dataclass(frozen=True)
class SolverResult:
    alpha: np.ndarray
    gradient: np.ndarray
    rho: float
    gap: float
    iterations: int


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    """K[i, j] = exp(-gamma * ||A_i - B_j||^2)"""
    sq = (A ** 2).sum(axis=1)[:, None] + (B ** 2).sum(axis=1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


def solve_one_class_dual(K: np.ndarray, nu: float, tol: float = 1e-6, max_iter: int = 100_000) -> SolverResult:
    """
    SMO for the nu-one-class dual on a precomputed kernel matrix

    Args:
        K: Kernel matrix (n x n)
        nu: Fraction parameter in (0, 1)
        tol: Stopping threshold on the maximal KKT violation
        max_iter: Iteration limit

    Returns:
        SolverResult with alpha, gradient K @ alpha, offset rho and final gap
    """
    n = K.shape[0]
    C = 1.0 / (nu * n)

    alpha = np.zeros(n)
    bounded = min(n, int(np.floor(nu * n + 1e-9)))
    alpha[:bounded] = C
    if bounded < n:
        alpha[bounded] = max(0.0, 1.0 - bounded * C)

    G = K @ alpha
    diag = np.diag(K)
    best_gap = np.inf
    gap = np.inf
    iterations = 0

    while iterations < max_iter:
        up = alpha < C
        low = alpha > 0
        if not up.any() or not low.any():
            gap = 0.0
            break
        minus_g = -G
        i = int(np.argmax(np.where(up, minus_g, -np.inf)))
        g_max = minus_g[i]
        g_min = float(np.min(np.where(low, minus_g, np.inf)))
        gap = g_max - g_min
        best_gap = min(best_gap, gap)
        if gap <= tol:
            break

        b = g_max + G
        a = diag[i] + diag - 2.0 * K[i]
        a = np.where(a > 0, a, _TAU)
        objective = np.where(low & (b > 0), -(b * b) / a, np.inf)
        j = int(np.argmin(objective))
        if not np.isfinite(objective[j]):
            break

        delta = b[j] / a[j]
        room_i, room_j = C - alpha[i], alpha[j]
        if delta >= room_i:
            delta = room_i
        if delta >= room_j:
            delta = room_j
        alpha[i] = C if delta == room_i else alpha[i] + delta
        alpha[j] = 0.0 if delta == room_j else alpha[j] - delta
        G += delta * (K[:, i] - K[:, j])
        iterations += 1
    else:
        raise ConvergenceError("One-class SVM solver did not converge", best_gap=float(best_gap), iterations=iterations)

    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(G[free].mean())
    else:
        at_zero = G[alpha == 0]
        at_bound = G[alpha >= C]
        upper = float(at_zero.min()) if at_zero.size else float(G.max())
        lower = float(at_bound.max()) if at_bound.size else float(G.min())
        rho = (upper + lower) / 2.0
    return SolverResult(alpha=alpha, gradient=G, rho=rho, gap=float(max(gap, 0.0)), iterations=iterations)


class OcsvmModel:
    """
    Trained one-class boundary

    Features are min-max scaled with training bounds; decision >= 0 means
    the point lies inside the learned region.
    """

    algorithm = "one_class_svm"

    def __init__(
        self,
        vocabulary: Sequence[str],
        hyperparameters: Mapping[str, Any],
        support_vectors,
        alpha,
        rho: float,
        gamma: float,
        lower,
        span,
        positive_label: str = "in-class",
        negative_label: str = "out-of-class",
        gap: float = 0.0,
        iterations: int = 0
    ):
        self.vocabulary = tuple(vocabulary)
        self.hyperparameters = dict(hyperparameters)
        self.alpha = np.asarray(alpha, dtype=float)
        self.support_vectors = np.asarray(support_vectors, dtype=float).reshape(len(self.alpha), len(self.vocabulary))
        self.rho = float(rho)
        self.gamma = float(gamma)
        self.lower = np.asarray(lower, dtype=float)
        self.span = np.asarray(span, dtype=float)
        self.positive_label = positive_label
        self.negative_label = negative_label
        self.gap = float(gap)
        self.iterations = int(iterations)
        self._index = {name: i for i, name in enumerate(self.vocabulary)}

    @property
    def label_space(self):
        return (self.positive_label, self.negative_label)

    def scale(self, X: np.ndarray) -> np.ndarray:
        return (X - self.lower) / self.span

    def decision_matrix(self, X: np.ndarray) -> np.ndarray:
        """Sum_i alpha_i K(sv_i, x) - rho for each row of raw features"""
        K = rbf_kernel(self.scale(X), self.support_vectors, self.gamma)
        return K @ self.alpha - self.rho

    def decision(self, features: Mapping[str, float]) -> float:
        return float(self.decision_matrix(vectorize(features, self.vocabulary, self._index)[None, :])[0])

    def decisions(self, rows: Iterable[Mapping[str, float]]) -> np.ndarray:
        X = vectorize_many(rows, self.vocabulary)
        if X.shape[0] == 0:
            return np.zeros(0)
        return self.decision_matrix(X)

    def predict(self, features: Mapping[str, float]) -> Prediction:
        value = self.decision(features)
        label = self.positive_label if value >= 0 else self.negative_label
        return Prediction(label, {self.positive_label: value, self.negative_label: -value})

    def predict_many(self, rows: Iterable[Mapping[str, float]]) -> List[Prediction]:
        return [
            Prediction(self.positive_label if value >= 0 else self.negative_label,
                       {self.positive_label: float(value), self.negative_label: -float(value)})
            for value in self.decisions(rows)
        ]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "algorithm": self.algorithm,
            "vocabulary": list(self.vocabulary),
            "hyperparameters": self.hyperparameters,
            "parameters": {
                "support_vectors": self.support_vectors.tolist(),
                "alpha": self.alpha.tolist(),
                "rho": self.rho,
                "gamma": self.gamma,
                "lower": self.lower.tolist(),
                "span": self.span.tolist(),
                "positive_label": self.positive_label,
                "negative_label": self.negative_label,
                "gap": self.gap,
                "iterations": self.iterations,
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> OcsvmModel:
        return cls(data["vocabulary"], data["hyperparameters"], **data["parameters"])


def train_ocsvm(
    rows: Sequence[Mapping[str, float]],
    vocabulary: Sequence[str],
    config: OcsvmConfig = OcsvmConfig(),
    positive_label: str = "in-class",
    negative_label: str = "out-of-class"
) -> OcsvmModel:
    """
    Fit a one-class SVM on the rows of a single class

    Args:
        rows: Feature vectors of the modeled class
        vocabulary: Feature names fixing dense columns
        config: nu, gamma (default 1/d), tolerance, iteration limit
        positive_label: Label for decision >= 0
        negative_label: Label for decision < 0

    Returns:
        OcsvmModel holding only the support vectors
    """
    if not rows:
        raise DataError("One-class SVM needs at least one training row")
    if not 0.0 < config.nu < 1.0:
        raise DataError(f"nu must lie in (0, 1), got {config.nu}")
    gamma = config.gamma if config.gamma is not None else 1.0 / max(1, len(vocabulary))
    if gamma <= 0:
        raise DataError(f"gamma must be positive, got {gamma}")

    X = vectorize_many(rows, vocabulary)
    lower = X.min(axis=0)
    span = X.max(axis=0) - lower
    span[span == 0] = 1.0
    scaled = (X - lower) / span

    K = rbf_kernel(scaled, scaled, gamma)
    np.fill_diagonal(K, 1.0)
    result = solve_one_class_dual(K, config.nu, config.tol, config.max_iter)

    support = result.alpha > 0
    logger.info(
        f"One-class SVM: {len(rows)} rows, {int(support.sum())} support vectors, "
        f"gap {result.gap:.2e} after {result.iterations} iterations"
    )
    return OcsvmModel(
        vocabulary=vocabulary,
        hyperparameters={"nu": config.nu, "gamma": gamma, "tol": config.tol, "max_iter": config.max_iter},
        support_vectors=scaled[support],
        alpha=result.alpha[support],
        rho=result.rho,
        gamma=gamma,
        lower=lower,
        span=span,
        positive_label=positive_label,
        negative_label=negative_label,
        gap=result.gap,
        iterations=result.iterations,
    )
