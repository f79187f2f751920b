"""
Helpers shared by the stage handlers
"""
from collections import Counter
from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Type

from core.flow_capture import HttpFlow, flow_from_record
from core.flow_features import STAT_FIELDS, SparseFeatureVector
from core.intention import VoterSettings
from core.logistic import LogisticConfig
from core.ocsvm import OcsvmConfig
from core.random_forest import ForestConfig
from utils.config import RunConfig
from utils.errors import DataError
from utils.file_handler import FileHandler, read_records

CAPTURE_SUFFIXES = (".pcap", ".cap")
FEATURE_COLUMNS = ("flow_id", *STAT_FIELDS, "lexical")


def output_handler(config: RunConfig) -> FileHandler:
    return FileHandler(config.output_dir)


def collect_captures(paths: Sequence[str]) -> List[Path]:
    """
    Expand capture arguments into files

    Directories contribute their *.pcap and *.cap files in name order.
    """
    files: List[Path] = []
    for entry in paths:
        path = Path(entry)
        if path.is_dir():
            files.extend(sorted(p for p in path.iterdir() if p.suffix.lower() in CAPTURE_SUFFIXES))
        elif path.is_file():
            files.append(path)
        else:
            raise DataError(f"Capture path not found: {path}")
    if not files:
        raise DataError(f"No capture files found in {', '.join(paths)}")
    return files


def renumber_sessions(flows: Sequence[HttpFlow]) -> List[HttpFlow]:
    """Session indices counted per 4-tuple over the whole capture set"""
    seen: Counter = Counter()
    renumbered = []
    for flow in flows:
        renumbered.append(replace(flow, session_index=seen[flow.key]))
        seen[flow.key] += 1
    return renumbered


def load_flows(file_handler: FileHandler) -> List[HttpFlow]:
    return load_flows_file(file_handler.require("flows.jsonl"))


def load_flows_file(path: Path) -> List[HttpFlow]:
    if not Path(path).is_file():
        raise DataError(f"Flow file not found: {path}")
    try:
        return [flow_from_record(r) for r in read_records(Path(path))]
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"Malformed flow record in {path}: {e}")


def load_vectors(file_handler: FileHandler) -> List[Tuple[str, SparseFeatureVector]]:
    """Full feature vectors per flow, read back from features.tsv"""
    frame = file_handler.load_table("features.tsv")
    missing = [c for c in FEATURE_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"features.tsv lacks columns {missing}; rerun 'featurize'")
    vectors = []
    for record in frame.to_dict("records"):
        stats = SparseFeatureVector({name: float(record[name]) for name in STAT_FIELDS})
        lexical = SparseFeatureVector.from_text(str(record["lexical"]))
        vectors.append((str(record["flow_id"]), stats.union(lexical)))
    return vectors


def read_label_map(path: str, key: str, value: str) -> Dict[str, str]:
    """key -> value over the records of a JSONL label file"""
    labels = {}
    for record in read_records(Path(path)):
        if key not in record or value not in record:
            raise DataError(f"{path}: record {record} lacks {key!r} or {value!r}")
        labels[str(record[key])] = str(record[value])
    return labels


def load_flow_labels(file_handler: FileHandler) -> Dict[str, str]:
    return {str(r["flow_id"]): str(r["class"]) for r in file_handler.load_records("flow_labels.jsonl")}


def ground_truth_map(config: RunConfig) -> Optional[Dict[str, str]]:
    if not config.ground_truth:
        return None
    config.require_valid(("ground_truth",))
    return read_label_map(config.ground_truth, "flow_id", "class")


def _settings(cls: Type, overrides: Mapping[str, Any], section: str, **defaults):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(overrides) - known)
    if unknown:
        raise DataError(f"Unknown {section} setting(s): {', '.join(unknown)}; valid: {', '.join(sorted(known))}")
    return cls(**{**defaults, **overrides})


def forest_config(config: RunConfig) -> ForestConfig:
    return _settings(ForestConfig, config.rf, "rf", seed=config.seed)


def logistic_config(config: RunConfig) -> LogisticConfig:
    return _settings(LogisticConfig, config.lr, "lr")


def ocsvm_config(config: RunConfig) -> OcsvmConfig:
    return _settings(OcsvmConfig, config.ocsvm, "ocsvm")


def voter_settings(config: RunConfig) -> VoterSettings:
    unknown = sorted(set(config.nb) - {"smoothing"})
    if unknown:
        raise DataError(f"Unknown nb setting(s): {', '.join(unknown)}; valid: smoothing")
    return VoterSettings(
        smoothing=float(config.nb.get("smoothing", 1.0)),
        logistic=logistic_config(config),
        forest=forest_config(config),
    )
