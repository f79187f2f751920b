"""
Common interface and serialization for trained models
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, ClassVar, Dict, Iterable, List, Mapping, Sequence, Type

import numpy as np

from core.dataset import vectorize, vectorize_many
from utils.errors import SchemaError


@dataclass(frozen=True)
class Prediction:
    label: str
    scores: Dict[str, float]


class Classifier(ABC):
    """A trained multi-class model over a fixed vocabulary"""

    algorithm: ClassVar[str] = ""

    def __init__(self, label_space: Sequence[str], vocabulary: Sequence[str], hyperparameters: Mapping[str, Any]):
        self.label_space = tuple(label_space)
        self.vocabulary = tuple(vocabulary)
        self.hyperparameters = dict(hyperparameters)
        self._index = {name: i for i, name in enumerate(self.vocabulary)}

    @abstractmethod
    def score_matrix(self, X: np.ndarray) -> np.ndarray:
        """Per-class scores, shape (rows, classes)"""

    @abstractmethod
    def parameters(self) -> Dict[str, Any]:
        """JSON-ready learned parameters"""

    @classmethod
    @abstractmethod
    def from_parameters(cls, label_space, vocabulary, hyperparameters, parameters) -> Classifier:
        """Rebuild from to_dict() output"""

    def predict(self, features: Mapping[str, float]) -> Prediction:
        """
        Label and per-class scores for one feature vector

        Unknown feature names are ignored; ties go to the earlier label.
        """
        scores = self.score_matrix(vectorize(features, self.vocabulary, self._index)[None, :])[0]
        best = int(np.argmax(scores))
        return Prediction(self.label_space[best], {label: float(s) for label, s in zip(self.label_space, scores)})

    def predict_many(self, rows: Iterable[Mapping[str, float]]) -> List[Prediction]:
        X = vectorize_many(rows, self.vocabulary)
        if X.shape[0] == 0:
            return []
        scores = self.score_matrix(X)
        predictions = []
        for row_scores in scores:
            best = int(np.argmax(row_scores))
            predictions.append(Prediction(
                self.label_space[best],
                {label: float(s) for label, s in zip(self.label_space, row_scores)},
            ))
        return predictions

    def to_dict(self) -> Dict[str, Any]:
        return {
            "algorithm": self.algorithm,
            "label_space": list(self.label_space),
            "vocabulary": list(self.vocabulary),
            "hyperparameters": self.hyperparameters,
            "parameters": self.parameters(),
        }


_REGISTRY: Dict[str, Type[Classifier]] = {}


def register_model(cls: Type[Classifier]) -> Type[Classifier]:
    _REGISTRY[cls.algorithm] = cls
    return cls


def model_from_dict(data: Mapping[str, Any]) -> Classifier:
    """Rebuild any registered model from its serialized form"""
    algorithm = data.get("algorithm")
    model_cls = _REGISTRY.get(algorithm)
    if model_cls is None:
        raise SchemaError(f"Unknown model algorithm {algorithm!r}")
    try:
        return model_cls.from_parameters(
            data["label_space"], data["vocabulary"], data["hyperparameters"], data["parameters"]
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"Corrupted {algorithm} model: {e}")
