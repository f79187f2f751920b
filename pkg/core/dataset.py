"""
Labeled datasets and their dense representation
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from utils.errors import DataError

Row = Tuple[Mapping[str, float], str]


def vectorize(features: Mapping[str, float], vocabulary: Sequence[str], index: Optional[Mapping[str, int]] = None) -> np.ndarray:
    """
    Dense vector over a vocabulary; names outside it are ignored

    Args:
        features: Named features
        vocabulary: Ordered feature names
        index: Optional precomputed name -> position map

    Returns:
        1-D float array of len(vocabulary)
    """
    if index is None:
        index = {name: i for i, name in enumerate(vocabulary)}
    vector = np.zeros(len(vocabulary), dtype=float)
    for name, value in features.items():
        position = index.get(name)
        if position is not None:
            vector[position] = value
    return vector


def vectorize_many(rows: Iterable[Mapping[str, float]], vocabulary: Sequence[str]) -> np.ndarray:
    index = {name: i for i, name in enumerate(vocabulary)}
    rows = list(rows)
    matrix = np.zeros((len(rows), len(vocabulary)), dtype=float)
    for r, features in enumerate(rows):
        for name, value in features.items():
            position = index.get(name)
            if position is not None:
                matrix[r, position] = value
    return matrix


@dataclass(frozen=True)
class LabeledDataset:
    """Feature rows with labels; vocabulary fixes dense column order"""
    rows: Tuple[Row, ...]
    label_space: Tuple[str, ...]
    vocabulary: Tuple[str, ...]

    def __post_init__(self):
        vocab = set(self.vocabulary)
        if len(vocab) != len(self.vocabulary):
            raise DataError("Vocabulary contains duplicate feature names")
        labels = set(self.label_space)
        for features, label in self.rows:
            if label not in labels:
                raise DataError(f"Label {label!r} is not in label space {self.label_space}")
            unknown = set(features) - vocab
            if unknown:
                raise DataError(f"Row features outside vocabulary: {sorted(unknown)[:5]}")

    @classmethod
    def from_rows(
        cls,
        rows: Iterable[Row],
        label_space: Optional[Sequence[str]] = None,
        extra_vocabulary: Iterable[str] = ()
    ) -> LabeledDataset:
        """
        Build a dataset whose vocabulary is the sorted union of row feature names

        Args:
            rows: (features, label) pairs
            label_space: Label order; defaults to sorted distinct labels
            extra_vocabulary: Names always included in the vocabulary

        Returns:
            LabeledDataset
        """
        rows = tuple((features, label) for features, label in rows)
        names = set(extra_vocabulary)
        for features, _ in rows:
            names.update(features)
        if label_space is None:
            label_space = sorted({label for _, label in rows})
        return cls(rows=rows, label_space=tuple(label_space), vocabulary=tuple(sorted(names)))

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def labels(self) -> List[str]:
        return [label for _, label in self.rows]

    def matrix(self) -> np.ndarray:
        return vectorize_many((features for features, _ in self.rows), self.vocabulary)

    def label_indices(self) -> np.ndarray:
        position = {label: i for i, label in enumerate(self.label_space)}
        return np.array([position[label] for _, label in self.rows], dtype=int)

    def class_counts(self) -> dict:
        counts = {label: 0 for label in self.label_space}
        for _, label in self.rows:
            counts[label] += 1
        return counts

    def subset(self, indices: Iterable[int]) -> LabeledDataset:
        """Rows at the given positions, same label space and vocabulary"""
        return LabeledDataset(
            rows=tuple(self.rows[i] for i in indices),
            label_space=self.label_space,
            vocabulary=self.vocabulary,
        )

    def with_vocabulary(self, vocabulary: Sequence[str]) -> LabeledDataset:
        return LabeledDataset(rows=self.rows, label_space=self.label_space, vocabulary=tuple(vocabulary))

    def canonical(self) -> LabeledDataset:
        """Same data with the vocabulary in name order"""
        if list(self.vocabulary) == sorted(self.vocabulary):
            return self
        return self.with_vocabulary(sorted(self.vocabulary))

    def require_rows(self) -> None:
        if not self.rows:
            raise DataError("Cannot train on an empty dataset")
