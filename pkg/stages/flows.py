"""
Flow-model stages: train the bundle from labeled features, classify flows with it
"""
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict

from core.flow_model import FeatureSet, Mode, ModelBundle, classify_flow, train_flow_models
from stages.common import forest_config, load_flow_labels, load_flows_file, load_vectors, ocsvm_config, output_handler
from utils.config import FEATURE_SETS, MODES, RunConfig
from utils.logger import get_logger

logger = get_logger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("train-flow", help="Train the supervised and one-class flow models")
    parser.add_argument("--mode", choices=MODES, help="Which flow models to train")
    parser.add_argument("--feature-set", dest="feature_set", choices=FEATURE_SETS, help="Feature families to use")
    parser.set_defaults(handler=train_flow_stage)

    parser = subparsers.add_parser("classify", help="Classify flows with a trained model bundle")
    parser.add_argument("--flows", dest="flows_file", help="flows.jsonl to classify (default: output directory)")
    parser.set_defaults(handler=classify_stage)


def train_flow_stage(config: RunConfig, args=None) -> Dict[str, Any]:
    file_handler = output_handler(config)
    inputs = [file_handler.require("features.tsv"), file_handler.require("flow_labels.jsonl")]
    vectors = load_vectors(file_handler)
    labels = load_flow_labels(file_handler)
    label_summary = file_handler.load_json("label_summary.json", "label_summary")

    # Voters ride along as provenance; a truth-labeled run has none.
    voters: Dict[str, Any] = {}
    if file_handler.path("context_model.json").exists():
        voters = file_handler.load_json("context_model.json", "context_model")["voters"]

    mode = Mode(config.mode)
    feature_set = FeatureSet(config.feature_set)
    supervised, one_class = train_flow_models(
        vectors, labels, mode, feature_set, forest_config(config), ocsvm_config(config), config.jobs
    )
    bundle = ModelBundle(
        feature_set=feature_set,
        seed=config.seed,
        supervised=supervised,
        one_class=one_class,
        voters=voters,
        topic_digest=label_summary.get("topic_digest"),
        hostlist_digest=label_summary.get("hostlist_digest"),
    )
    output = file_handler.save_json("bundle.json", "model_bundle", bundle.to_dict())

    summary: Dict[str, Any] = {"mode": mode.value, "feature_set": feature_set.value, "labeled_flows": len(labels)}
    if supervised is not None:
        summary["forest_oob_score"] = getattr(supervised, "oob_score", None)
    if one_class is not None:
        summary["support_vectors"] = len(one_class.alpha)
    file_handler.save_manifest("train-flow", inputs, [output], config.to_dict(), config.seed, summary)
    return summary


def classify_stage(config: RunConfig, args=None) -> Dict[str, Any]:
    """verdicts.jsonl: one record per flow, from packets and requests only"""
    file_handler = output_handler(config)
    bundle_path = file_handler.require("bundle.json")
    bundle = ModelBundle.from_dict(file_handler.load_json("bundle.json", "model_bundle"))

    flows_file = getattr(args, "flows_file", None)
    source = Path(flows_file) if flows_file else file_handler.require("flows.jsonl")
    flows = load_flows_file(source)

    with ThreadPoolExecutor(max_workers=config.jobs) as pool:
        verdicts = list(pool.map(lambda flow: classify_flow(bundle, flow), flows))

    output = file_handler.save_records("verdicts.jsonl", "verdicts", (v.to_record() for v in verdicts))
    summary: Dict[str, Any] = {"flows": len(verdicts)}
    if bundle.supervised is not None:
        counts: Dict[str, int] = {}
        for verdict in verdicts:
            counts[verdict.supervised_label] = counts.get(verdict.supervised_label, 0) + 1
        summary["supervised"] = dict(sorted(counts.items()))
    if bundle.one_class is not None:
        summary["one_class_positive"] = sum(1 for v in verdicts if v.one_class_label == bundle.one_class.positive_label)
    file_handler.save_manifest("classify", [bundle_path, source], [output], config.to_dict(), config.seed, summary)
    return summary
