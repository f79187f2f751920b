"""
Metrics, cross-validation and distribution export
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd

from core.dataset import LabeledDataset
from core.flow_capture import HttpFlow
from core.flow_features import STAT_FIELDS, stat_features
from core.models import Prediction
from utils.errors import DataError
from utils.logger import get_logger

logger = get_logger(__name__)


class ConfusionMatrix:
    """counts[actual][predicted] over an ordered label space"""

    def __init__(self, label_space: Sequence[str], counts: Optional[np.ndarray] = None):
        self.label_space = tuple(label_space)
        size = len(self.label_space)
        self.counts = np.zeros((size, size), dtype=int) if counts is None else np.asarray(counts, dtype=int)
        if self.counts.shape != (size, size) or (self.counts < 0).any():
            raise DataError("Confusion counts must be a non-negative square matrix over the label space")
        self._position = {label: i for i, label in enumerate(self.label_space)}

    @classmethod
    def from_pairs(cls, actual: Iterable[str], predicted: Iterable[str], label_space: Sequence[str]) -> ConfusionMatrix:
        cm = cls(label_space)
        for a, p in zip(actual, predicted):
            cm.add(a, p)
        return cm

    def add(self, actual: str, predicted: str, count: int = 1) -> None:
        try:
            self.counts[self._position[actual], self._position[predicted]] += count
        except KeyError as e:
            raise DataError(f"Label {e} is not in label space {self.label_space}")

    def __add__(self, other: ConfusionMatrix) -> ConfusionMatrix:
        if other.label_space != self.label_space:
            raise DataError("Cannot add confusion matrices over different label spaces")
        return ConfusionMatrix(self.label_space, self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def support(self, label: str) -> int:
        return int(self.counts[self._position[label]].sum())

    def one_vs_rest(self, positive: str) -> Tuple[int, int, int, int]:
        """(TP, FN, FP, TN) with positive against every other label"""
        if positive not in self._position:
            raise DataError(f"Label {positive!r} is not in label space {self.label_space}")
        i = self._position[positive]
        tp = int(self.counts[i, i])
        fn = int(self.counts[i].sum()) - tp
        fp = int(self.counts[:, i].sum()) - tp
        tn = self.total - tp - fn - fp
        return tp, fn, fp, tn

    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {"label_space": list(self.label_space), "counts": self.counts.tolist()}


@dataclass(frozen=True)
class Metrics:
    tp_rate: float
    fp_rate: float
    precision: float
    f_measure: float
    degenerate: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tp_rate": self.tp_rate,
            "fp_rate": self.fp_rate,
            "precision": self.precision,
            "f_measure": self.f_measure,
            "degenerate": list(self.degenerate),
        }


def _ratio(numerator: int, denominator: int, name: str, degenerate: List[str]) -> float:
    if denominator == 0:
        degenerate.append(name)
        return 0.0
    return numerator / denominator


def metrics_from_counts(tp: int, fn: int, fp: int, tn: int) -> Metrics:
    """
    TP rate, FP rate, precision and F-measure from a 2x2 table

    A zero denominator reports the metric as 0 and names it in degenerate.
    """
    degenerate: List[str] = []
    return Metrics(
        tp_rate=_ratio(tp, tp + fn, "tp_rate", degenerate),
        fp_rate=_ratio(fp, fp + tn, "fp_rate", degenerate),
        precision=_ratio(tp, tp + fp, "precision", degenerate),
        f_measure=_ratio(2 * tp, 2 * tp + fp + fn, "f_measure", degenerate),
        degenerate=tuple(degenerate),
    )


def metrics(cm: ConfusionMatrix, positive: str) -> Metrics:
    """One-vs-rest metrics of one label"""
    return metrics_from_counts(*cm.one_vs_rest(positive))


@dataclass
class EvalReport:
    """Per-class and averaged metrics of one evaluation"""
    title: str
    confusion: ConfusionMatrix
    per_class: Dict[str, Metrics]
    weighted: Dict[str, float]
    macro: Dict[str, float]
    folds: int = 0
    seed: Optional[int] = None
    ranking: Dict[str, List[Tuple[str, float]]] = field(default_factory=dict)
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return self.confusion.accuracy()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "title": self.title,
            "folds": self.folds,
            "seed": self.seed,
            "accuracy": self.accuracy,
            "confusion": self.confusion.to_dict(),
            "per_class": {label: m.to_dict() for label, m in self.per_class.items()},
            "weighted": self.weighted,
            "macro": self.macro,
            "ranking": {family: [[name, gain] for name, gain in items] for family, items in self.ranking.items()},
            "extra": self.extra,
        }

    def to_text(self) -> str:
        lines = [f"== {self.title} ==", f"folds: {self.folds}  seed: {self.seed}  rows: {self.confusion.total}"]
        lines.append(f"{'class':<14}{'TP rate':>10}{'FP rate':>10}{'precision':>11}{'F-measure':>11}")
        for label, m in self.per_class.items():
            flag = "  (degenerate: " + ", ".join(m.degenerate) + ")" if m.degenerate else ""
            lines.append(f"{label:<14}{m.tp_rate:>10.3f}{m.fp_rate:>10.3f}{m.precision:>11.3f}{m.f_measure:>11.3f}{flag}")
        for name, avg in (("weighted avg", self.weighted), ("macro avg", self.macro)):
            lines.append(
                f"{name:<14}{avg['tp_rate']:>10.3f}{avg['fp_rate']:>10.3f}{avg['precision']:>11.3f}{avg['f_measure']:>11.3f}"
            )
        lines.append(f"accuracy: {self.accuracy:.3f}")
        lines.append("confusion (rows actual, columns predicted):")
        lines.append("  " + " ".join(f"{label:>12}" for label in self.confusion.label_space))
        for label, row in zip(self.confusion.label_space, self.confusion.counts):
            lines.append(f"  {label:<12}" + " ".join(f"{int(c):>12}" for c in row))
        for family, items in self.ranking.items():
            lines.append(f"top {family} attributes by information gain:")
            lines.extend(f"  {gain:.4f}  {name}" for name, gain in items)
        for key, value in self.extra.items():
            lines.append(f"{key}: {value}")
        return "\n".join(lines) + "\n"


def build_report(
    title: str,
    cm: ConfusionMatrix,
    folds: int = 0,
    seed: Optional[int] = None,
    positives: Optional[Sequence[str]] = None
) -> EvalReport:
    """
    Per-class one-vs-rest metrics with support-weighted and macro averages

    Args:
        title: Report heading
        cm: Aggregated confusion matrix
        folds: Fold count (0 for a single split)
        seed: Seed of the evaluation
        positives: Labels to report; defaults to the whole label space

    Returns:
        EvalReport
    """
    labels = list(positives) if positives is not None else list(cm.label_space)
    per_class = {label: metrics(cm, label) for label in labels}
    keys = ("tp_rate", "fp_rate", "precision", "f_measure")
    supports = np.array([cm.support(label) for label in labels], dtype=float)

    macro = {k: float(np.mean([getattr(per_class[l], k) for l in labels])) if labels else 0.0 for k in keys}
    if supports.sum() > 0:
        weighted = {
            k: float(np.dot(supports, [getattr(per_class[l], k) for l in labels]) / supports.sum()) for k in keys
        }
    else:
        weighted = {k: 0.0 for k in keys}
    return EvalReport(title, cm, per_class, weighted, macro, folds=folds, seed=seed)


def stratified_folds(labels: Sequence[str], k: int, seed: int, label_space: Sequence[str]) -> np.ndarray:
    """
    Fold index per row: each class shuffled with the seed and dealt round-robin

    Args:
        labels: Row labels
        k: Fold count (>= 2)
        seed: Shuffle seed
        label_space: Classes that must each hold at least k rows

    Returns:
        Integer array of fold indices
    """
    if k < 2:
        raise DataError(f"k must be at least 2, got {k}")
    labels = np.asarray(labels, dtype=object)
    rng = np.random.default_rng(seed)
    fold_of = np.full(len(labels), -1, dtype=int)
    for label in label_space:
        members = np.nonzero(labels == label)[0]
        if len(members) < k:
            raise DataError(f"Class {label!r} has {len(members)} rows, fewer than k={k} folds")
        fold_of[rng.permutation(members)] = np.arange(len(members)) % k
    return fold_of


class Predictor(Protocol):
    def predict_many(self, rows: Iterable[Mapping[str, float]]) -> List[Prediction]: ...


@dataclass
class KFoldResult:
    confusion: ConfusionMatrix
    report: EvalReport
    predictions: List[str]
    fold_of: np.ndarray


def kfold(
    data: LabeledDataset,
    k: int,
    seed: int,
    trainer: Callable[[LabeledDataset], Predictor],
    jobs: int = 1,
    title: str = "cross-validation",
    truth: Optional[Sequence[str]] = None
) -> KFoldResult:
    """
    Stratified k-fold cross-validation

    Every row is predicted exactly once, by a model trained on the other
    folds; confusions are summed over folds.

    Args:
        data: Labeled rows
        k: Fold count
        seed: Fold shuffle seed
        trainer: Callable fitting a predictor on a training subset
        jobs: Folds trained in parallel
        title: Report heading
        truth: Labels to score against when they differ from the training labels

    Returns:
        KFoldResult with aggregated confusion, report and per-row predictions
    """
    data.require_rows()
    fold_of = stratified_folds(data.labels, k, seed, data.label_space)

    def run_fold(fold: int) -> Tuple[np.ndarray, List[str]]:
        test = np.nonzero(fold_of == fold)[0]
        train = np.nonzero(fold_of != fold)[0]
        model = trainer(data.subset(train))
        predicted = [p.label for p in model.predict_many(data.rows[i][0] for i in test)]
        logger.debug(f"{title}: fold {fold} trained on {len(train)} rows, tested on {len(test)}")
        return test, predicted

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        outcomes = list(pool.map(run_fold, range(k)))

    predictions: List[Optional[str]] = [None] * len(data)
    for test, predicted in outcomes:
        for i, label in zip(test, predicted):
            predictions[i] = label
    actual = list(truth) if truth is not None else data.labels
    if len(actual) != len(data):
        raise DataError(f"{len(actual)} truth labels for {len(data)} rows")
    cm = ConfusionMatrix.from_pairs(actual, predictions, data.label_space)
    report = build_report(title, cm, folds=k, seed=seed)
    logger.info(f"{title}: {k}-fold accuracy {cm.accuracy():.3f}, weighted F {report.weighted['f_measure']:.3f}")
    return KFoldResult(cm, report, predictions, fold_of)


def retained_accuracy(truth: Sequence[str], voted: Sequence[Optional[str]]) -> Tuple[float, int]:
    """
    Accuracy over unanimous rows only

    Args:
        truth: True labels
        voted: Consensus labels, None where the voters disagreed

    Returns:
        (correct unanimous / unanimous, number of unanimous rows)
    """
    retained = [(t, v) for t, v in zip(truth, voted) if v is not None]
    if not retained:
        return 0.0, 0
    return sum(1 for t, v in retained if t == v) / len(retained), len(retained)


@dataclass
class CdfTable:
    selector: str
    frame: pd.DataFrame
    empty_classes: Tuple[str, ...]


def _cdf_frame(values: Mapping[str, List[float]], classes: Sequence[str]) -> Tuple[pd.DataFrame, List[str]]:
    parts = []
    empty = []
    for label in classes:
        if not values[label]:
            empty.append(label)
            continue
        points, counts = np.unique(np.asarray(values[label]), return_counts=True)
        cumulative = np.cumsum(counts) / counts.sum()
        cumulative[-1] = 1.0
        parts.append(pd.DataFrame({"class": label, "value": points, "cumulative_fraction": cumulative}))
    if parts:
        return pd.concat(parts, ignore_index=True), empty
    return pd.DataFrame(columns=["class", "value", "cumulative_fraction"]), empty


def cdf_tables(
    flows: Iterable[HttpFlow],
    labels: Mapping[str, str],
    selectors: Sequence[str],
    classes: Sequence[str]
) -> List[CdfTable]:
    """
    Per-class empirical CDFs of several statistical features

    Each flow's statistics are computed once and shared by every selector.
    Duplicate values collapse into one point carrying their summed mass.

    Args:
        flows: Flows to summarize
        labels: flow_id -> class; unlabeled flows are ignored
        selectors: StatVector field names
        classes: Classes to report, in order

    Returns:
        One CdfTable per selector with columns class, value, cumulative_fraction
    """
    unknown = [s for s in selectors if s not in STAT_FIELDS]
    if unknown:
        raise DataError(f"Unknown feature {unknown[0]!r}; valid fields: {', '.join(STAT_FIELDS)}")

    values: Dict[str, Dict[str, List[float]]] = {s: {c: [] for c in classes} for s in selectors}
    for flow in flows:
        label = labels.get(flow.flow_id)
        if label not in classes:
            continue
        stats = stat_features(flow)
        for selector in selectors:
            values[selector][label].append(float(getattr(stats, selector)))

    tables = []
    for selector in selectors:
        frame, empty = _cdf_frame(values[selector], classes)
        if empty:
            logger.warning(f"CDF of {selector}: no flows for {empty}")
        tables.append(CdfTable(selector, frame, tuple(empty)))
    return tables


def cdf_export(
    flows: Iterable[HttpFlow],
    labels: Mapping[str, str],
    selector: str,
    classes: Sequence[str]
) -> CdfTable:
    """Per-class empirical CDF of one statistical feature"""
    return cdf_tables(flows, labels, [selector], classes)[0]


def one_class_split(
    labels: Sequence[str],
    positive: str,
    seed: int,
    train_fraction: float = 0.8
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Train/test row indices for the one-class protocol

    A random train_fraction of positive rows trains the model; the held-out
    positives plus an equal-size random sample of other rows form the test set.

    Returns:
        (train indices, test indices)
    """
    labels = np.asarray(labels, dtype=object)
    rng = np.random.default_rng(seed)
    positives = rng.permutation(np.nonzero(labels == positive)[0])
    others = rng.permutation(np.nonzero(labels != positive)[0])
    n_train = int(round(train_fraction * len(positives)))
    if n_train == 0 or n_train == len(positives):
        raise DataError(f"One-class protocol needs positive rows on both sides of the split; have {len(positives)}")
    held_out = positives[n_train:]
    if len(others) == 0:
        raise DataError(f"One-class protocol needs rows outside {positive!r}")
    test = np.concatenate([held_out, others[:len(held_out)]])
    return np.sort(positives[:n_train]), np.sort(test)


def one_class_protocol(
    data: LabeledDataset,
    positive: str,
    negative: str,
    seed: int,
    trainer: Callable[[LabeledDataset], Predictor],
    title: str = "one-class protocol",
    truth: Optional[Sequence[str]] = None,
    train_fraction: float = 0.8
) -> EvalReport:
    """
    Train on a share of the positive rows, score held-out positives against an equal sample of the rest

    Args:
        data: Rows of every class
        positive: The class the model describes
        negative: Label the model emits for everything else
        seed: Split seed
        trainer: Fits a predictor on positive-only rows
        title: Report heading
        truth: Labels to score against when they differ from data.labels

    Returns:
        EvalReport over (positive, negative), metrics reported for the positive class
    """
    data.require_rows()
    actual = list(truth) if truth is not None else data.labels
    if len(actual) != len(data):
        raise DataError(f"{len(actual)} truth labels for {len(data)} rows")
    train, test = one_class_split(data.labels, positive, seed, train_fraction)

    train_rows = [(data.rows[i][0], positive) for i in train]
    model = trainer(LabeledDataset.from_rows(train_rows, label_space=(positive,)))
    predicted = [p.label for p in model.predict_many(data.rows[i][0] for i in test)]
    expected = [positive if actual[i] == positive else negative for i in test]

    cm = ConfusionMatrix.from_pairs(expected, predicted, (positive, negative))
    report = build_report(title, cm, seed=seed, positives=(positive,))
    report.extra = {"train_rows": len(train), "test_rows": len(test)}
    logger.info(f"{title}: F-measure {report.per_class[positive].f_measure:.3f} on {len(test)} held-out rows")
    return report
