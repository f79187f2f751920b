import pytest

from core.context_features import (
    CITY_CLICKABLE,
    AppContext,
    TopicConfig,
    assign_topic,
    context_topic,
    context_vector,
    load_contexts,
    name_features,
    preprocess_text,
    ui_features,
)
from utils.errors import DataError, SchemaError


def _context(**overrides):
    fields = {
        "instance_id": "inst-1",
        "app_name": "LocalWeather",
        "description": "Weather forecast with radar maps",
        "market_category": "WEATHER",
    }
    fields.update(overrides)
    return AppContext(**fields)


def test_name_features_split_camel_case(topic_config):
    assert set(name_features("LocalWeather", topic_config)) == {"name:local", "name:weather"}


def test_name_features_segment_undelimited_runs(topic_config):
    assert set(name_features("superflashlight", topic_config)) == {"name:super", "name:flashlight"}


def test_preprocess_text_stems_and_drops_stopwords(topic_config):
    assert preprocess_text("The Weather Forecasts", topic_config.stopwords) == ["weather", "forecast"]


def test_preprocess_text_defaults_to_shipped_stopwords():
    assert preprocess_text("the cities") == ["citi"]
    assert preprocess_text("the cities", ()) == ["the", "citi"]


def test_context_topic_from_description(topic_config):
    assert context_topic(_context(), topic_config) == "weather and stars"


def test_context_topic_falls_back_to_market_category(topic_config):
    context = _context(app_name="Zxq", description="qwv zzk")
    assert context_topic(context, topic_config) == "market:WEATHER"


def test_assign_topic_ties_go_to_smallest_name():
    config = TopicConfig(
        topics={"beta": frozenset({"x"}), "alpha": frozenset({"y"})},
        city_names=frozenset(),
        name_wordlist=(),
    )
    assert assign_topic(["x", "y"], config, "OTHER") == "alpha"


def test_ui_features_flag_clickable_city(topic_config):
    context = _context(ui_texts=("Weather in Davis",), clickable_labels=("Davis",))
    vector = ui_features(context, topic_config)

    assert CITY_CLICKABLE in vector
    assert "ui:weather" in vector
    assert "ui:in" not in vector


def test_ui_features_without_city(topic_config):
    context = _context(ui_texts=("Settings",), clickable_labels=("Refresh",))
    assert CITY_CLICKABLE not in ui_features(context, topic_config)


def test_context_vector_has_exactly_one_topic(topic_config):
    for context in (_context(), _context(app_name="Zxq", description="qwv")):
        vector = context_vector(context, topic_config)
        assert len([name for name in vector if name.startswith("topic:")]) == 1
        assert all(value == 1.0 for value in vector.values())


def test_load_contexts_rejects_duplicates():
    record = _context().to_record()
    with pytest.raises(DataError):
        load_contexts([record, record])


def test_context_requires_market_category():
    with pytest.raises(DataError):
        AppContext.from_record({"instance_id": "inst-9", "app_name": "x"})


def test_topic_config_rejects_other_stemmer(topic_config):
    data = topic_config.to_dict()
    data["stemmer"] = "snowball"
    with pytest.raises(SchemaError):
        TopicConfig.from_dict(data)


def test_topic_config_digest_is_stable(topic_config):
    assert TopicConfig.from_dict(topic_config.to_dict()).digest() == topic_config.digest()
