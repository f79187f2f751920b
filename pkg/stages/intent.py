"""
Intention stages: train the context voters, then label instances and flows
"""
from pathlib import Path
from typing import Any, Dict, List

from core.context_features import load_contexts, load_topic_config, topic_config_summary
from core.flow_capture import CoordinateKeys
from core.intention import IntentionVoters, context_dataset, train_context_voters
from core.labeling import InstanceLabel, InstanceVerdict, LabelingStats, auto_label_flows, label_instances, load_hostlist
from stages.common import load_flows, output_handler, read_label_map, voter_settings
from utils.config import INSTANCE_LABEL_SOURCES, RunConfig
from utils.errors import DataError, SchemaError
from utils.file_handler import read_records
from utils.logger import get_logger

logger = get_logger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("train-context", help="Train the three intention voters on labeled instances")
    parser.add_argument("--contexts", help="JSONL of running-instance contexts")
    parser.add_argument("--context-labels", dest="context_labels", help="JSONL of instance_id/label pairs")
    parser.add_argument("--topic-config", dest="topic_config", help="Topic keyword configuration")
    parser.set_defaults(handler=train_context_stage)

    parser = subparsers.add_parser("label", help="Label instances by consensus vote and derive flow classes")
    parser.add_argument("--instance-labels", dest="instance_labels", choices=INSTANCE_LABEL_SOURCES,
                        help="voted: consensus of the context voters; truth: the instance_truth file")
    parser.add_argument("--test-contexts", dest="test_contexts", help="Contexts of the instances to label")
    parser.add_argument("--hostlist", help="Ad and analytics hostname suffixes")
    parser.set_defaults(handler=label_stage)


def train_context_stage(config: RunConfig, args=None) -> Dict[str, Any]:
    config.require_valid(("contexts", "context_labels", "topic_config"))
    file_handler = output_handler(config)
    topics = load_topic_config(Path(config.topic_config))
    contexts = load_contexts(read_records(Path(config.contexts)))
    labels = read_label_map(config.context_labels, "instance_id", "label")

    data = context_dataset(contexts, labels, topics)
    voters = train_context_voters(data, voter_settings(config), config.jobs)

    summary = {"instances": len(data), "class_counts": data.class_counts(), "features": len(data.vocabulary)}
    output = file_handler.save_json("context_model.json", "context_model", {
        "voters": voters.to_dict(),
        "topic_digest": topics.digest(),
        "topic_summary": topic_config_summary(topics, contexts),
        "seed": config.seed,
        "summary": summary,
    })
    inputs = [Path(config.contexts), Path(config.context_labels), Path(config.topic_config)]
    file_handler.save_manifest("train-context", inputs, [output], config.to_dict(), config.seed, summary)
    return summary


def _truth_instance_labels(config: RunConfig) -> List[InstanceLabel]:
    config.require_valid(("instance_truth",))
    labels = []
    for instance_id, label in sorted(read_label_map(config.instance_truth, "instance_id", "label").items()):
        try:
            labels.append(InstanceLabel(instance_id, InstanceVerdict(label)))
        except ValueError:
            raise DataError(f"{config.instance_truth}: instance {instance_id} has unknown label {label!r}")
    return labels


def label_stage(config: RunConfig, args=None) -> Dict[str, Any]:
    """
    Instance verdicts, flow classes and a labeling summary

    Voted labels come from the trained context voters applied to the test
    contexts (or the training contexts when none are configured).
    """
    config.require_valid(("hostlist",))
    file_handler = output_handler(config)
    inputs = [file_handler.require("flows.jsonl"), Path(config.hostlist)]
    flows = load_flows(file_handler)
    hostlist = load_hostlist(Path(config.hostlist))

    topic_digest = None
    if config.instance_labels == "truth":
        instance_labels = _truth_instance_labels(config)
        inputs.append(Path(config.instance_truth))
    else:
        model = file_handler.load_json("context_model.json", "context_model")
        config.require_valid(("topic_config",))
        topics = load_topic_config(Path(config.topic_config))
        topic_digest = topics.digest()
        if model.get("topic_digest") != topic_digest:
            raise SchemaError(
                f"Topic configuration {config.topic_config} differs from the one the context model was trained with"
            )
        voters = IntentionVoters.from_dict(model["voters"])
        source = "test_contexts" if config.test_contexts else "contexts"
        config.require_valid((source,))
        contexts = load_contexts(read_records(Path(getattr(config, source))))
        instance_labels = label_instances(contexts, voters.nb, voters.lr, voters.rf, topics)
        inputs.extend([file_handler.path("context_model.json"), Path(getattr(config, source))])

    stats = LabelingStats()
    coordinate_keys = CoordinateKeys.from_dict(config.coordinate_keys)
    flow_labels = auto_label_flows(flows, instance_labels, hostlist, stats, coordinate_keys)
    verdict_counts: Dict[str, int] = {}
    for label in instance_labels:
        verdict_counts[label.verdict.value] = verdict_counts.get(label.verdict.value, 0) + 1

    summary = {
        "source": config.instance_labels,
        "instances": verdict_counts,
        "flows": stats.to_dict(),
        "hostlist_digest": hostlist.digest,
        "hostlist_entries": len(hostlist.entries),
        "topic_digest": topic_digest,
    }
    outputs = [
        file_handler.save_records("instance_labels.jsonl", "instance_labels", (l.to_record() for l in instance_labels)),
        file_handler.save_records("flow_labels.jsonl", "flow_labels", (l.to_record() for l in flow_labels)),
        file_handler.save_json("label_summary.json", "label_summary", summary),
    ]
    file_handler.save_manifest("label", inputs, outputs, config.to_dict(), config.seed, summary)
    logger.info(f"Labeled {len(flow_labels)} of {stats.flows_in} flows: {dict(stats.classes)}")
    return summary
