import pytest

from core.context_features import AppContext, load_contexts
from core.evaluation import retained_accuracy
from core.intention import (
    VOTER_NAMES,
    IntentionVoters,
    VoterSettings,
    context_dataset,
    cross_validate_voters,
    train_context_voters,
)
from core.labeling import InstanceVerdict, label_instances
from core.models import Prediction
from core.random_forest import ForestConfig
from core.synthetic import generate_corpus
from utils.errors import DataError
from tests.conftest import SMALL_CORPUS

DISAGREE = frozenset(range(0, 100, 10))
WRONG_BUT_UNANIMOUS = frozenset({5, 15, 25})


class FixedVoter:
    """Replays a fixed label sequence, one label per row"""

    def __init__(self, labels):
        self.labels = labels

    def predict_many(self, rows):
        rows = list(rows)
        assert len(rows) == len(self.labels)
        return [Prediction(label, {}) for label in self.labels]


def _truth(i):
    return "expected" if i % 2 == 0 else "unexpected"


def _flip(label):
    return "unexpected" if label == "expected" else "expected"


def _voters():
    agreed = [_flip(_truth(i)) if i in WRONG_BUT_UNANIMOUS else _truth(i) for i in range(100)]
    lr = [_flip(label) if i in DISAGREE else label for i, label in enumerate(agreed)]
    return FixedVoter(agreed), FixedVoter(list(agreed)), FixedVoter(lr)


def _contexts():
    return [
        AppContext(f"inst-{i:03d}", "LocalWeather", "Weather forecast", "WEATHER")
        for i in range(100)
    ]


def test_disagreements_are_filtered(topic_config):
    rf, nb, lr = _voters()

    labels = label_instances(_contexts(), nb, lr, rf, topic_config)

    filtered = [i for i, label in enumerate(labels) if label.verdict == InstanceVerdict.FILTERED]
    assert filtered == sorted(DISAGREE)
    assert labels[1].votes == ("unexpected", "unexpected", "unexpected")


def test_retained_accuracy_by_hand(topic_config):
    rf, nb, lr = _voters()
    labels = label_instances(_contexts(), nb, lr, rf, topic_config)

    voted = [None if l.verdict == InstanceVerdict.FILTERED else l.verdict.value for l in labels]
    accuracy, retained = retained_accuracy([_truth(i) for i in range(100)], voted)

    # 90 unanimous rows, 3 of them unanimously wrong
    assert retained == 90
    assert accuracy == pytest.approx(87 / 90)


def test_intention_voters_report_filtered():
    rf, nb, lr = _voters()
    predictions = IntentionVoters(rf=rf, nb=nb, lr=lr).predict_many([{}] * 100)

    assert sum(p.label == "filtered" for p in predictions) == len(DISAGREE)
    assert set(predictions[0].scores) == set(VOTER_NAMES)


@pytest.fixture(scope="module")
def intention_data(topic_config):
    corpus = generate_corpus(SMALL_CORPUS)
    return context_dataset(load_contexts(corpus.train_contexts), corpus.train_labels, topic_config)


FAST_VOTERS = VoterSettings(forest=ForestConfig(n_trees=10, seed=3))


def test_context_dataset_rejects_unknown_labels(topic_config):
    context = AppContext("inst-1", "LocalWeather", "Weather forecast", "WEATHER")
    with pytest.raises(DataError):
        context_dataset([context], {"inst-1": "maybe"}, topic_config)


def test_trained_voters_serialize(intention_data):
    voters = train_context_voters(intention_data, FAST_VOTERS)
    restored = IntentionVoters.from_dict(voters.to_dict())

    rows = [features for features, _ in intention_data.rows]
    assert [p.label for p in restored.predict_many(rows)] == [p.label for p in voters.predict_many(rows)]


def test_cross_validated_voters_on_separable_contexts(intention_data):
    result = cross_validate_voters(intention_data, k=4, seed=1, settings=FAST_VOTERS)

    reports = result["reports"]
    assert set(reports) == {*VOTER_NAMES, "consensus"}
    consensus = reports["consensus"].extra
    assert consensus["retained"] + consensus["filtered"] == len(intention_data)
    assert consensus["retained_accuracy"] >= 0.9
    assert len(result["voted"]) == len(intention_data)
