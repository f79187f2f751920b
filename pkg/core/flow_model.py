"""
Flow datasets, the model bundle and testing-stage classification
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

from core.dataset import LabeledDataset
from core.flow_capture import HttpFlow
from core.flow_features import STAT_FIELDS, SparseFeatureVector, flow_lexical_features, stat_features, stat_vector_features
from core.labeling import FLOW_CLASSES, FlowClass
from core.models import Classifier, model_from_dict
from core.ocsvm import OcsvmConfig, OcsvmModel, train_ocsvm
from core.random_forest import ForestConfig, train_random_forest
from utils.errors import DataError, SchemaError
from utils.logger import get_logger

logger = get_logger(__name__)

FEATURE_SCHEMA_VERSION = 1
ONE_CLASS_NEGATIVE = "other"
_STAT_NAMES = frozenset(STAT_FIELDS)


class FeatureSet(str, Enum):
    STATISTICAL = "statistical"
    LEXICAL = "lexical"
    BOTH = "both"


class Mode(str, Enum):
    SUPERVISED = "supervised"
    ONE_CLASS = "one-class"
    BOTH = "both"

    @property
    def supervised(self) -> bool:
        return self in (Mode.SUPERVISED, Mode.BOTH)

    @property
    def one_class(self) -> bool:
        return self in (Mode.ONE_CLASS, Mode.BOTH)


def flow_vector(flow: HttpFlow, feature_set: FeatureSet = FeatureSet.BOTH) -> SparseFeatureVector:
    """Statistical and/or lexical features of one flow"""
    vector = SparseFeatureVector()
    if feature_set in (FeatureSet.STATISTICAL, FeatureSet.BOTH):
        vector = vector.union(stat_vector_features(stat_features(flow)))
    if feature_set in (FeatureSet.LEXICAL, FeatureSet.BOTH):
        vector = vector.union(flow_lexical_features(flow))
    return vector


def select_features(vector: Mapping[str, float], feature_set: FeatureSet) -> SparseFeatureVector:
    """Restrict a full flow vector to one feature family"""
    if feature_set == FeatureSet.STATISTICAL:
        return SparseFeatureVector({k: v for k, v in vector.items() if k in _STAT_NAMES})
    if feature_set == FeatureSet.LEXICAL:
        return SparseFeatureVector({k: v for k, v in vector.items() if k not in _STAT_NAMES})
    return SparseFeatureVector(vector)


def build_flow_dataset(
    flows: Iterable[HttpFlow],
    labels: Mapping[str, str],
    mode: Mode = Mode.SUPERVISED,
    feature_set: FeatureSet = FeatureSet.BOTH
) -> LabeledDataset:
    """
    Assemble the labeled flow dataset for one learning regime

    Args:
        flows: Flows; those without a label are skipped
        labels: flow_id -> flow class
        mode: SUPERVISED keeps all three classes; ONE_CLASS keeps illegal-loc rows only
        feature_set: Feature families to include

    Returns:
        LabeledDataset whose vocabulary is the union of retained feature names
    """
    vectors = ((flow.flow_id, flow_vector(flow, feature_set)) for flow in flows)
    return dataset_from_vectors(vectors, labels, mode, feature_set)


def dataset_from_vectors(
    vectors: Iterable[Tuple[str, Mapping[str, float]]],
    labels: Mapping[str, str],
    mode: Mode = Mode.SUPERVISED,
    feature_set: FeatureSet = FeatureSet.BOTH
) -> LabeledDataset:
    """
    build_flow_dataset over precomputed flow vectors

    Args:
        vectors: (flow_id, full feature vector) pairs; unlabeled ids are skipped
        labels: flow_id -> flow class
        mode: SUPERVISED keeps all three classes; ONE_CLASS keeps illegal-loc rows only
        feature_set: Feature families to include

    Returns:
        LabeledDataset whose vocabulary is the union of retained feature names
    """
    if mode == Mode.BOTH:
        raise DataError("build_flow_dataset needs a single mode, not 'both'")

    rows = []
    for flow_id, vector in vectors:
        label = labels.get(flow_id)
        if label is None:
            continue
        label = FlowClass(label).value
        if mode == Mode.ONE_CLASS and label != FlowClass.ILLEGAL.value:
            continue
        rows.append((select_features(vector, feature_set), label))

    if mode == Mode.SUPERVISED:
        counts = {c: 0 for c in FLOW_CLASSES}
        for _, label in rows:
            counts[label] += 1
        empty = [c for c, n in counts.items() if n == 0]
        if empty:
            raise DataError(f"Supervised flow dataset has no rows of class {', '.join(empty)}")
        return LabeledDataset.from_rows(rows, label_space=FLOW_CLASSES)

    if not rows:
        raise DataError(f"One-class flow dataset has no rows of class {FlowClass.ILLEGAL.value}")
    return LabeledDataset.from_rows(rows, label_space=(FlowClass.ILLEGAL.value,))


def train_one_class(data: LabeledDataset, config: OcsvmConfig = OcsvmConfig()) -> OcsvmModel:
    """One-class SVM over the illegal-loc rows of a dataset"""
    rows = [features for features, label in data.rows if label == FlowClass.ILLEGAL.value]
    return train_ocsvm(rows, data.vocabulary, config, FlowClass.ILLEGAL.value, ONE_CLASS_NEGATIVE)


@dataclass
class ModelBundle:
    """
    Everything the testing stage needs, plus provenance of the training stage

    Context voters and digests are provenance only; classify_flow reads the
    flow models alone.
    """
    feature_set: FeatureSet
    seed: int
    supervised: Optional[Classifier] = None
    one_class: Optional[OcsvmModel] = None
    voters: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    topic_digest: Optional[str] = None
    hostlist_digest: Optional[str] = None
    feature_schema_version: int = FEATURE_SCHEMA_VERSION

    def to_dict(self) -> Dict[str, Any]:
        return {
            "feature_schema_version": self.feature_schema_version,
            "stat_fields": list(STAT_FIELDS),
            "feature_set": self.feature_set.value,
            "seed": self.seed,
            "supervised": self.supervised.to_dict() if self.supervised is not None else None,
            "one_class": self.one_class.to_dict() if self.one_class is not None else None,
            "voters": self.voters,
            "topic_digest": self.topic_digest,
            "hostlist_digest": self.hostlist_digest,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ModelBundle:
        """Rebuild a bundle; data has already passed the artifact schema check"""
        if data.get("feature_schema_version") != FEATURE_SCHEMA_VERSION or data.get("stat_fields") != list(STAT_FIELDS):
            raise SchemaError(
                f"Bundle feature schema {data.get('feature_schema_version')!r} does not match "
                f"supported version {FEATURE_SCHEMA_VERSION}"
            )
        try:
            one_class = data.get("one_class")
            return cls(
                feature_set=FeatureSet(data["feature_set"]),
                seed=int(data["seed"]),
                supervised=model_from_dict(data["supervised"]) if data.get("supervised") else None,
                one_class=OcsvmModel.from_dict(one_class) if one_class else None,
                voters=dict(data.get("voters") or {}),
                topic_digest=data.get("topic_digest"),
                hostlist_digest=data.get("hostlist_digest"),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"Corrupted model bundle: {e}")


def train_flow_models(
    vectors: List[Tuple[str, Mapping[str, float]]],
    labels: Mapping[str, str],
    mode: Mode,
    feature_set: FeatureSet,
    forest: ForestConfig = ForestConfig(),
    ocsvm: OcsvmConfig = OcsvmConfig(),
    jobs: int = 1
) -> Tuple[Optional[Classifier], Optional[OcsvmModel]]:
    """
    Train the supervised and/or one-class flow models

    Returns:
        (random forest or None, one-class SVM or None)
    """
    supervised = one_class = None
    if mode.supervised:
        data = dataset_from_vectors(vectors, labels, Mode.SUPERVISED, feature_set)
        logger.info(f"Training flow forest on {len(data)} rows, {len(data.vocabulary)} features")
        supervised = train_random_forest(data, forest, jobs)
    if mode.one_class:
        data = dataset_from_vectors(vectors, labels, Mode.ONE_CLASS, feature_set)
        logger.info(f"Training one-class flow model on {len(data)} rows, {len(data.vocabulary)} features")
        one_class = train_one_class(data, ocsvm)
    return supervised, one_class


@dataclass(frozen=True)
class FlowVerdict:
    flow_id: str
    feature_hash: str
    supervised_label: Optional[str] = None
    supervised_scores: Dict[str, float] = field(default_factory=dict)
    one_class_label: Optional[str] = None
    one_class_decision: Optional[float] = None

    def to_record(self) -> Dict[str, Any]:
        return {
            "flow_id": self.flow_id,
            "feature_hash": self.feature_hash,
            "supervised": {"label": self.supervised_label, "scores": self.supervised_scores}
            if self.supervised_label is not None else None,
            "one_class": {"label": self.one_class_label, "decision": self.one_class_decision}
            if self.one_class_label is not None else None,
        }


def feature_hash(vector: SparseFeatureVector) -> str:
    return hashlib.sha256(vector.to_text().encode("utf-8")).hexdigest()


def classify_flow(bundle: ModelBundle, flow: HttpFlow) -> FlowVerdict:
    """
    Classify one flow from its traffic alone

    Only packets and parsed requests are read; instance annotations on the
    flow are ignored.

    Args:
        bundle: Loaded model bundle
        flow: Flow to classify

    Returns:
        FlowVerdict with the heads present in the bundle
    """
    if bundle.supervised is None and bundle.one_class is None:
        raise SchemaError("Model bundle holds no flow model")
    vector = flow_vector(flow, bundle.feature_set)
    verdict = {"flow_id": flow.flow_id, "feature_hash": feature_hash(vector)}
    if bundle.supervised is not None:
        prediction = bundle.supervised.predict(vector)
        verdict["supervised_label"] = prediction.label
        verdict["supervised_scores"] = prediction.scores
    if bundle.one_class is not None:
        prediction = bundle.one_class.predict(vector)
        verdict["one_class_label"] = prediction.label
        verdict["one_class_decision"] = prediction.scores[bundle.one_class.positive_label]
    return FlowVerdict(**verdict)
