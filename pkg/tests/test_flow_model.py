from dataclasses import replace

import pytest

from core.flow_capture import Direction
from core.flow_model import (
    FeatureSet,
    ModelBundle,
    Mode,
    build_flow_dataset,
    classify_flow,
    dataset_from_vectors,
    flow_vector,
    select_features,
    train_flow_models,
)
from core.flow_features import STAT_FIELDS
from core.ocsvm import OcsvmConfig
from core.random_forest import ForestConfig
from utils.errors import DataError, SchemaError
from tests.conftest import http_get, make_flow


def _flow(kind, i):
    if kind == "legal-loc":
        request = http_get("api.weather.example", f"/v2/forecast?lat=38.54{i:02d}&lon=-121.75{i:02d}")
        sizes = (300, 900)
    elif kind == "illegal-loc":
        request = http_get("ads.tracker.example", f"/ad/request?lat=38.54{i:02d}&lng=-121.75{i:02d}&slot=banner")
        sizes = (420, 1500)
    else:
        request = http_get("cdn.images.example", f"/img/thumb_{i}.png")
        sizes = (200, 1200 + i)
    return make_flow([
        (0.0, Direction.UPLINK, sizes[0], request),
        (0.05 + 0.001 * i, Direction.DOWNLINK, sizes[1], b""),
        (0.1 + 0.001 * i, Direction.UPLINK, 66, b""),
    ], instance_id=f"inst-{i}", taint=kind != "non-loc", sport=30000 + 100 * ("legal-loc", "illegal-loc", "non-loc").index(kind) + i)


@pytest.fixture(scope="module")
def labeled_flows():
    flows, labels = [], {}
    for kind in ("legal-loc", "illegal-loc", "non-loc"):
        for i in range(12):
            flow = _flow(kind, i)
            flows.append(flow)
            labels[flow.flow_id] = kind
    return flows, labels


@pytest.fixture(scope="module")
def bundle(labeled_flows):
    flows, labels = labeled_flows
    vectors = [(flow.flow_id, flow_vector(flow)) for flow in flows]
    supervised, one_class = train_flow_models(
        vectors, labels, Mode.BOTH, FeatureSet.BOTH,
        forest=ForestConfig(n_trees=10, seed=4), ocsvm=OcsvmConfig(nu=0.1),
    )
    return ModelBundle(feature_set=FeatureSet.BOTH, seed=4, supervised=supervised, one_class=one_class)


def test_select_features_by_family(labeled_flows):
    vector = flow_vector(labeled_flows[0][0])

    statistical = select_features(vector, FeatureSet.STATISTICAL)
    lexical = select_features(vector, FeatureSet.LEXICAL)

    assert set(statistical) <= set(STAT_FIELDS)
    assert "host:weather" in lexical and "len_url" in lexical
    assert set(statistical) | set(lexical) == set(vector)


def test_one_class_dataset_keeps_illegal_rows(labeled_flows):
    flows, labels = labeled_flows
    data = build_flow_dataset(flows, labels, Mode.ONE_CLASS)
    assert data.label_space == ("illegal-loc",)
    assert len(data) == 12


def test_supervised_dataset_needs_every_class(labeled_flows):
    flows, labels = labeled_flows
    legal_only = {k: v for k, v in labels.items() if v == "legal-loc"}
    with pytest.raises(DataError):
        build_flow_dataset(flows, legal_only, Mode.SUPERVISED)
    with pytest.raises(DataError):
        dataset_from_vectors([], labels, Mode.BOTH)


def test_classify_flow_labels_training_flows(bundle, labeled_flows):
    flows, labels = labeled_flows
    for flow in flows:
        verdict = classify_flow(bundle, flow)
        assert verdict.supervised_label == labels[flow.flow_id]
        assert verdict.one_class_label in ("illegal-loc", "other")


def test_classify_flow_ignores_instance_annotations(bundle, labeled_flows):
    flow = labeled_flows[0][0]
    stripped = replace(flow, source_instance_id="someone-else", taint_location=False)
    assert classify_flow(bundle, stripped) == classify_flow(bundle, flow)


def test_bundle_round_trip_keeps_verdicts(bundle, labeled_flows):
    restored = ModelBundle.from_dict(bundle.to_dict())
    flow = labeled_flows[0][13]
    assert classify_flow(restored, flow) == classify_flow(bundle, flow)


def test_bundle_rejects_other_feature_schema(bundle):
    data = bundle.to_dict()
    data["stat_fields"] = data["stat_fields"][:-1]
    with pytest.raises(SchemaError):
        ModelBundle.from_dict(data)

    data = bundle.to_dict()
    data["feature_set"] = "pixels"
    with pytest.raises(SchemaError):
        ModelBundle.from_dict(data)


def test_empty_bundle_cannot_classify(labeled_flows):
    with pytest.raises(SchemaError):
        classify_flow(ModelBundle(feature_set=FeatureSet.BOTH, seed=1), labeled_flows[0][0])
