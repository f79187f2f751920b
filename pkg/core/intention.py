"""
User-intention model: three context classifiers combined by consensus voting
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from core.context_features import AppContext, TopicConfig, context_vector
from core.dataset import LabeledDataset
from core.evaluation import ConfusionMatrix, EvalReport, build_report, retained_accuracy, stratified_folds
from core.labeling import INSTANCE_LABELS, InstanceVerdict, consensus_vote
from core.logistic import LogisticConfig, train_logistic
from core.models import Classifier, Prediction, model_from_dict
from core.naive_bayes import train_naive_bayes
from core.random_forest import ForestConfig, train_random_forest
from utils.errors import DataError, SchemaError
from utils.logger import get_logger

logger = get_logger(__name__)

VOTER_NAMES = ("random_forest", "naive_bayes", "logistic_regression")


@dataclass(frozen=True)
class VoterSettings:
    smoothing: float = 1.0
    logistic: LogisticConfig = LogisticConfig()
    forest: ForestConfig = ForestConfig()


@dataclass
class IntentionVoters:
    """The three intention classifiers; predict_many yields the consensus label or 'filtered'"""
    rf: Classifier
    nb: Classifier
    lr: Classifier

    def predict_many(self, rows: Iterable[Mapping[str, float]]) -> List[Prediction]:
        rows = list(rows)
        votes = zip(self.rf.predict_many(rows), self.nb.predict_many(rows), self.lr.predict_many(rows))
        predictions = []
        for p_rf, p_nb, p_lr in votes:
            agreed = consensus_vote(p_rf.label, p_nb.label, p_lr.label)
            predictions.append(Prediction(
                agreed if agreed is not None else InstanceVerdict.FILTERED.value,
                {"random_forest": p_rf.label, "naive_bayes": p_nb.label, "logistic_regression": p_lr.label},
            ))
        return predictions

    def to_dict(self) -> Dict[str, Any]:
        return {"random_forest": self.rf.to_dict(), "naive_bayes": self.nb.to_dict(), "logistic_regression": self.lr.to_dict()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> IntentionVoters:
        missing = [name for name in VOTER_NAMES if name not in data]
        if missing:
            raise SchemaError(f"Context model lacks voters: {missing}")
        return cls(
            rf=model_from_dict(data["random_forest"]),
            nb=model_from_dict(data["naive_bayes"]),
            lr=model_from_dict(data["logistic_regression"]),
        )


def context_dataset(
    contexts: Sequence[AppContext],
    labels: Mapping[str, str],
    config: TopicConfig
) -> LabeledDataset:
    """
    Labeled instance dataset for the intention voters

    Args:
        contexts: Running instances
        labels: instance_id -> expected / unexpected; unlabeled instances are skipped
        config: Topic configuration

    Returns:
        LabeledDataset over (expected, unexpected)
    """
    rows = []
    for context in contexts:
        label = labels.get(context.instance_id)
        if label is None:
            continue
        if label not in INSTANCE_LABELS:
            raise DataError(f"Instance {context.instance_id} has label {label!r}; expected one of {INSTANCE_LABELS}")
        rows.append((context_vector(context, config), label))
    if not rows:
        raise DataError("No labeled running instances to train the intention model")
    return LabeledDataset.from_rows(rows, label_space=INSTANCE_LABELS)


def train_context_voters(data: LabeledDataset, settings: VoterSettings = VoterSettings(), jobs: int = 1) -> IntentionVoters:
    """Fit random forest, naive Bayes and logistic regression on the same rows"""
    voters = IntentionVoters(
        rf=train_random_forest(data, settings.forest, jobs),
        nb=train_naive_bayes(data, settings.smoothing),
        lr=train_logistic(data, settings.logistic, jobs),
    )
    logger.info(f"Trained intention voters on {len(data)} instances, {len(data.vocabulary)} features")
    return voters


def cross_validate_voters(
    data: LabeledDataset,
    k: int,
    seed: int,
    settings: VoterSettings = VoterSettings(),
    jobs: int = 1
) -> Dict[str, Any]:
    """
    k-fold evaluation of each voter and of the consensus vote

    All voters share one fold assignment, so the consensus of a row uses
    the three predictions made for it.

    Args:
        data: Labeled instances
        k: Fold count
        seed: Fold shuffle seed
        settings: Voter hyperparameters
        jobs: Intra-voter parallelism

    Returns:
        Reports per voter, the consensus report over retained rows, and
        retained-set statistics
    """
    data.require_rows()
    fold_of = stratified_folds(data.labels, k, seed, data.label_space)
    per_voter: Dict[str, List[Optional[str]]] = {name: [None] * len(data) for name in VOTER_NAMES}

    for fold in range(k):
        test = np.nonzero(fold_of == fold)[0]
        voters = train_context_voters(data.subset(np.nonzero(fold_of != fold)[0]), settings, jobs)
        rows = [data.rows[i][0] for i in test]
        for name, model in zip(VOTER_NAMES, (voters.rf, voters.nb, voters.lr)):
            for i, prediction in zip(test, model.predict_many(rows)):
                per_voter[name][i] = prediction.label

    truth = data.labels
    reports: Dict[str, EvalReport] = {}
    for name in VOTER_NAMES:
        cm = ConfusionMatrix.from_pairs(truth, per_voter[name], data.label_space)
        reports[name] = build_report(f"intention voter {name}", cm, folds=k, seed=seed)

    voted = [
        consensus_vote(rf, nb, lr)
        for rf, nb, lr in zip(per_voter["random_forest"], per_voter["naive_bayes"], per_voter["logistic_regression"])
    ]
    accuracy, retained = retained_accuracy(truth, voted)
    kept = [(t, v) for t, v in zip(truth, voted) if v is not None]
    cm = ConfusionMatrix.from_pairs([t for t, _ in kept], [v for _, v in kept], data.label_space)
    voting = build_report("intention consensus vote (retained instances)", cm, folds=k, seed=seed)
    voting.extra = {"retained": retained, "filtered": len(data) - retained, "retained_accuracy": accuracy}
    reports["consensus"] = voting
    logger.info(f"Consensus vote retained {retained}/{len(data)} instances, accuracy {accuracy:.3f}")
    return {"reports": reports, "voted": voted}
