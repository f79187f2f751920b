"""
Report stages: cross-validated evaluation and CDF export
"""
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from core.context_features import load_contexts, load_topic_config
from core.dataset import LabeledDataset
from core.evaluation import EvalReport, cdf_tables, kfold, one_class_protocol
from core.flow_features import STAT_FIELDS, SparseFeatureVector
from core.flow_model import ONE_CLASS_NEGATIVE, FeatureSet, Mode, dataset_from_vectors, select_features, train_one_class
from core.info_gain import info_gain
from core.intention import context_dataset, cross_validate_voters
from core.labeling import FLOW_CLASSES, FlowClass
from core.random_forest import train_random_forest
from stages.common import (
    forest_config,
    ground_truth_map,
    load_flow_labels,
    load_flows,
    load_vectors,
    ocsvm_config,
    output_handler,
    read_label_map,
    voter_settings,
)
from utils.config import MODES, RunConfig
from utils.file_handler import read_records
from utils.logger import get_logger

logger = get_logger(__name__)

RANKING_SIZE = 10
ABLATION_ORDER = (FeatureSet.BOTH, FeatureSet.STATISTICAL, FeatureSet.LEXICAL)


def register(subparsers) -> None:
    parser = subparsers.add_parser("evaluate", help="Cross-validate the intention and flow models")
    parser.add_argument("--mode", choices=MODES, help="Which flow models to evaluate")
    parser.add_argument("--folds", type=int, help="Cross-validation folds (default 10)")
    parser.set_defaults(handler=evaluate_stage)

    parser = subparsers.add_parser("cdf", help="Export per-class CDFs of the statistical features")
    parser.add_argument("--feature", action="append", dest="cdf_features",
                        help="StatVector field to export (repeatable; default every field)")
    parser.set_defaults(handler=cdf_stage)


def _ranking(data: LabeledDataset) -> Dict[str, List[Tuple[str, float]]]:
    """Top attributes by information gain, statistical and lexical listed apart"""
    gains = info_gain(data)
    statistical = [(name, gain) for name, gain in gains if name in STAT_FIELDS]
    lexical = [(name, gain) for name, gain in gains if name not in STAT_FIELDS]
    return {"statistical": statistical[:RANKING_SIZE], "lexical": lexical[:RANKING_SIZE]}


def _intention_reports(config: RunConfig) -> List[EvalReport]:
    config.require_valid(("contexts", "context_labels", "topic_config"))
    topics = load_topic_config(Path(config.topic_config))
    contexts = load_contexts(read_records(Path(config.contexts)))
    labels = read_label_map(config.context_labels, "instance_id", "label")
    data = context_dataset(contexts, labels, topics)
    result = cross_validate_voters(data, config.folds, config.seed, voter_settings(config), config.jobs)
    reports = result["reports"]
    reports["consensus"].ranking = _ranking(data)
    return list(reports.values())


def _supervised_reports(
    config: RunConfig,
    vectors: Sequence[Tuple[str, SparseFeatureVector]],
    labels: Mapping[str, str],
    truth: Optional[Mapping[str, str]]
) -> List[EvalReport]:
    """k-fold forest reports for every feature family, scored against ground truth when present"""
    forest = forest_config(config)
    labeled_ids = [flow_id for flow_id, _ in vectors if flow_id in labels]
    scored = [truth.get(flow_id, labels[flow_id]) for flow_id in labeled_ids] if truth else None

    reports = []
    for feature_set in ABLATION_ORDER:
        data = dataset_from_vectors(vectors, labels, Mode.SUPERVISED, feature_set)
        result = kfold(
            data, config.folds, config.seed,
            trainer=lambda train: train_random_forest(train, forest),
            jobs=config.jobs,
            title=f"flow forest ({feature_set.value} features)",
            truth=scored,
        )
        if feature_set == FeatureSet.BOTH:
            result.report.ranking = _ranking(data)
        reports.append(result.report)
    return reports


def _one_class_report(
    config: RunConfig,
    vectors: Sequence[Tuple[str, SparseFeatureVector]],
    labels: Mapping[str, str],
    truth: Optional[Mapping[str, str]]
) -> EvalReport:
    """Held-out illegal flows against an equal sample of the rest"""
    feature_set = FeatureSet(config.feature_set)
    labeled = [(flow_id, vector) for flow_id, vector in vectors if flow_id in labels]
    rows = [(select_features(vector, feature_set), FlowClass(labels[flow_id]).value) for flow_id, vector in labeled]
    data = LabeledDataset.from_rows(rows, label_space=FLOW_CLASSES)
    scored = [truth.get(flow_id, labels[flow_id]) for flow_id, _ in labeled] if truth else None
    settings = ocsvm_config(config)
    return one_class_protocol(
        data,
        positive=FlowClass.ILLEGAL.value,
        negative=ONE_CLASS_NEGATIVE,
        seed=config.seed,
        trainer=lambda train: train_one_class(train, settings),
        title=f"one-class flow model ({feature_set.value} features)",
        truth=scored,
    )


def evaluate_stage(config: RunConfig, args=None) -> Dict[str, Any]:
    """report.json and report.txt: intention voters, flow forest ablation, one-class protocol"""
    file_handler = output_handler(config)
    inputs = [file_handler.require("features.tsv"), file_handler.require("flow_labels.jsonl")]
    vectors = load_vectors(file_handler)
    labels = load_flow_labels(file_handler)
    truth = ground_truth_map(config)
    if truth is not None:
        inputs.append(Path(config.ground_truth))
    mode = Mode(config.mode)

    reports: List[EvalReport] = []
    if config.contexts and config.context_labels:
        reports.extend(_intention_reports(config))
    else:
        logger.info("No labeled contexts configured; skipping intention evaluation")
    if mode.supervised:
        reports.extend(_supervised_reports(config, vectors, labels, truth))
    if mode.one_class:
        reports.append(_one_class_report(config, vectors, labels, truth))

    report = {
        "seed": config.seed,
        "folds": config.folds,
        "mode": mode.value,
        "scored_against": "ground_truth" if truth is not None else "auto_labels",
        "sections": [r.to_dict() for r in reports],
    }
    outputs = [
        file_handler.save_json("report.json", "report", report),
        file_handler.save_text("report.txt", "\n".join(r.to_text() for r in reports)),
    ]
    summary = {r.title: round(r.weighted["f_measure"], 6) for r in reports}
    file_handler.save_manifest("evaluate", inputs, outputs, config.to_dict(), config.seed, summary)
    return summary


def cdf_stage(config: RunConfig, args=None) -> Dict[str, Any]:
    """cdf_<field>.tsv per selected StatVector field; ground-truth classes when configured"""
    file_handler = output_handler(config)
    inputs = [file_handler.require("flows.jsonl")]
    flows = load_flows(file_handler)
    labels = ground_truth_map(config)
    if labels is None:
        inputs.append(file_handler.require("flow_labels.jsonl"))
        labels = load_flow_labels(file_handler)

    selectors = list(getattr(args, "cdf_features", None) or STAT_FIELDS)
    outputs = []
    empty = {}
    for table in cdf_tables(flows, labels, selectors, FLOW_CLASSES):
        outputs.append(file_handler.save_table(f"cdf_{table.selector}.tsv", table.frame))
        if table.empty_classes:
            empty[table.selector] = list(table.empty_classes)

    summary = {"fields": len(selectors), "empty_classes": empty}
    file_handler.save_manifest("cdf", inputs, outputs, config.to_dict(), config.seed, summary)
    return summary
