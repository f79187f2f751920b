import json

import pytest

import app
from core.flow_capture import flow_from_record
from utils.file_handler import read_records
from tests.conftest import fast_run_config


def _run(config_path, out_dir, *stage):
    return app.main(["--config", str(config_path), "--output-dir", str(out_dir), *stage])


@pytest.fixture(scope="module")
def pipeline_runs(synthetic_inputs, tmp_path_factory):
    """Two complete runs of the same config into separate output directories"""
    base = tmp_path_factory.mktemp("pipeline")
    config_path = fast_run_config(synthetic_inputs, base / "run.json")
    outputs = [base / "first", base / "second"]
    with pytest.MonkeyPatch.context() as mp:
        mp.setenv("LOCINTENT_LOG_DIR", str(base / "logs"))
        codes = [_run(config_path, out, "run") for out in outputs]
    return config_path, outputs, codes


def _sections(out_dir):
    report = json.loads((out_dir / "report.json").read_text(encoding="utf-8"))
    return {section["title"]: section for section in report["sections"]}


def test_run_succeeds_and_writes_artifacts(pipeline_runs):
    _, (first, _), codes = pipeline_runs
    assert codes == [0, 0]
    for name in ("flows.jsonl", "features.tsv", "context_model.json", "instance_labels.jsonl",
                 "flow_labels.jsonl", "bundle.json", "verdicts.jsonl", "report.json", "report.txt",
                 "cdf_tcp_count.tsv", "manifest_sessionize.json", "manifest_evaluate.json"):
        assert (first / name).exists(), name


def test_sessions_match_ground_truth_ids(pipeline_runs, synthetic_inputs):
    _, (first, _), _ = pipeline_runs
    flow_ids = {flow_from_record(r).flow_id for r in read_records(first / "flows.jsonl")}
    truth_ids = {r["flow_id"] for r in read_records(synthetic_inputs["ground_truth"])}
    assert flow_ids == truth_ids


def test_flow_forest_quality(pipeline_runs):
    _, (first, _), _ = pipeline_runs
    sections = _sections(first)

    assert sections["flow forest (both features)"]["weighted"]["f_measure"] >= 0.9
    assert sections["flow forest (statistical features)"]["weighted"]["f_measure"] >= 0.8
    ranking = sections["flow forest (both features)"]["ranking"]
    assert len(ranking["statistical"]) == 10 and ranking["lexical"]


def test_one_class_quality(pipeline_runs):
    _, (first, _), _ = pipeline_runs
    section = _sections(first)["one-class flow model (both features)"]
    assert section["per_class"]["illegal-loc"]["f_measure"] >= 0.8


def test_consensus_report_present(pipeline_runs):
    _, (first, _), _ = pipeline_runs
    consensus = _sections(first)["intention consensus vote (retained instances)"]
    assert consensus["extra"]["retained"] + consensus["extra"]["filtered"] > 0


def test_runs_are_byte_identical(pipeline_runs):
    _, (first, second), _ = pipeline_runs
    for name in ("bundle.json", "report.json", "verdicts.jsonl", "features.tsv"):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_missing_upstream_artifact_exits_3(pipeline_runs, tmp_path):
    config_path, _, _ = pipeline_runs
    assert _run(config_path, tmp_path / "empty", "train-flow") == 3


def test_corrupted_bundle_exits_4(pipeline_runs, tmp_path):
    config_path, (first, _), _ = pipeline_runs
    out = tmp_path / "corrupt"
    out.mkdir()
    (out / "flows.jsonl").write_bytes((first / "flows.jsonl").read_bytes())
    (out / "bundle.json").write_text('{"schema_version": 1, "kind": "model_bundle", "feature_schema_version": 1', encoding="utf-8")
    assert _run(config_path, out, "classify") == 4


def test_foreign_schema_version_exits_4(pipeline_runs, tmp_path):
    config_path, (first, _), _ = pipeline_runs
    out = tmp_path / "future"
    out.mkdir()
    bundle = json.loads((first / "bundle.json").read_text(encoding="utf-8"))
    bundle["schema_version"] = 99
    (out / "bundle.json").write_text(json.dumps(bundle), encoding="utf-8")
    assert _run(config_path, out, "classify") == 4


def test_unknown_stage_is_a_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        app.main(["transmogrify"])
    assert excinfo.value.code == 2


def test_invalid_setting_exits_3(pipeline_runs, tmp_path):
    config_path, _, _ = pipeline_runs
    assert _run(config_path, tmp_path / "out", "evaluate", "--folds", "1") == 3
    assert app.main(["--config", str(config_path), "--jobs", "0", "featurize"]) == 3


def test_synth_writes_a_runnable_corpus(tmp_path):
    out = tmp_path / "corpus"
    code = app.main(["--output-dir", str(tmp_path / "out"), "synth", "--out", str(out),
                     "--instances", "10", "--train-contexts", "10", "--capture-files", "1"])
    assert code == 0
    config = json.loads((out / "run_config.json").read_text(encoding="utf-8"))
    assert len(config["captures"]) == 1
    assert (out / "ground_truth.jsonl").exists()


def test_classify_ignores_app_context(pipeline_runs, synthetic_inputs, tmp_path):
    _, (first, _), _ = pipeline_runs
    mutated = [
        {
            "instance_id": record["instance_id"],
            "app_name": "TotallyDifferentName",
            "description": "nothing about places at all",
            "market_category": "Finance",
            "ui_texts": ["balance", "transfer"],
            "clickable_labels": ["Pay"],
        }
        for record in read_records(synthetic_inputs["test_contexts"])
    ]
    contexts = tmp_path / "mutated_contexts.jsonl"
    header = {"schema_version": 1, "kind": "contexts"}
    contexts.write_text("".join(json.dumps(r) + "\n" for r in [header, *mutated]), encoding="utf-8")
    config_path = fast_run_config(synthetic_inputs, tmp_path / "mutated.json",
                                  contexts=str(contexts), test_contexts=str(contexts))
    out = tmp_path / "classify"
    out.mkdir()
    for name in ("bundle.json", "flows.jsonl"):
        (out / name).write_bytes((first / name).read_bytes())

    assert _run(config_path, out, "classify") == 0
    assert (out / "verdicts.jsonl").read_bytes() == (first / "verdicts.jsonl").read_bytes()
