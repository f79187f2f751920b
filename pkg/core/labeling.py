"""
Instance labeling by consensus voting and automatic flow labeling
"""
from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

from core.context_features import AppContext, TopicConfig, context_vector
from core.flow_capture import CoordinateKeys, HttpFlow, detect_coordinates
from core.models import Classifier
from utils.errors import DataError
from utils.logger import get_logger
from utils.validators import validate_hostname

logger = get_logger(__name__)


class InstanceVerdict(str, Enum):
    EXPECTED = "expected"
    UNEXPECTED = "unexpected"
    FILTERED = "filtered"


class FlowClass(str, Enum):
    LEGAL = "legal-loc"
    ILLEGAL = "illegal-loc"
    NON_LOC = "non-loc"


INSTANCE_LABELS = (InstanceVerdict.EXPECTED.value, InstanceVerdict.UNEXPECTED.value)
FLOW_CLASSES = (FlowClass.LEGAL.value, FlowClass.ILLEGAL.value, FlowClass.NON_LOC.value)


@dataclass(frozen=True)
class InstanceLabel:
    instance_id: str
    verdict: InstanceVerdict
    votes: Tuple[str, ...] = ()

    def to_record(self) -> Dict[str, object]:
        return {"instance_id": self.instance_id, "verdict": self.verdict.value, "votes": list(self.votes)}

    @classmethod
    def from_record(cls, record: Mapping[str, object]) -> InstanceLabel:
        try:
            return cls(str(record["instance_id"]), InstanceVerdict(record["verdict"]), tuple(record.get("votes", ())))
        except (KeyError, ValueError) as e:
            raise DataError(f"Malformed instance label {record}: {e}")


@dataclass(frozen=True)
class FlowLabel:
    flow_id: str
    flow_class: FlowClass

    def to_record(self) -> Dict[str, str]:
        return {"flow_id": self.flow_id, "class": self.flow_class.value}

    @classmethod
    def from_record(cls, record: Mapping[str, object]) -> FlowLabel:
        try:
            return cls(str(record["flow_id"]), FlowClass(record["class"]))
        except (KeyError, ValueError) as e:
            raise DataError(f"Malformed flow label {record}: {e}")


@dataclass(frozen=True)
class HostnameList:
    """Ad and analytics hostname suffixes"""
    entries: FrozenSet[str]
    source: str = "inline"
    digest: str = ""

    def matches(self, host: str) -> bool:
        """Suffix match on label boundaries: "ads.x.com" matches "x.com", "badx.com" does not"""
        host = host.strip().lower().rstrip(".")
        if ":" in host and not host.startswith("["):
            host = host.rsplit(":", 1)[0]
        labels = host.split(".")
        return any(".".join(labels[i:]) in self.entries for i in range(len(labels)))

    @classmethod
    def from_entries(cls, entries: Iterable[str], source: str = "inline") -> HostnameList:
        clean = set()
        for entry in entries:
            is_valid, error = validate_hostname(entry)
            if not is_valid:
                raise DataError(error)
            clean.add(entry)
        text = "\n".join(sorted(clean))
        return cls(frozenset(clean), source, hashlib.sha256(text.encode("utf-8")).hexdigest())


def load_hostlist(path: Path) -> HostnameList:
    """
    Load a hostname list: one hostname per line, "#" starts a comment

    Args:
        path: Hostname list file

    Returns:
        HostnameList
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"Hostname list not found: {path}")
    entries = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        entry = line.split("#", 1)[0].strip()
        if not entry:
            continue
        is_valid, error = validate_hostname(entry)
        if not is_valid:
            raise DataError(f"{path}:{line_no}: {error}")
        entries.append(entry)
    hostlist = HostnameList.from_entries(entries, source=str(path))
    logger.info(f"Loaded {len(hostlist.entries)} hostnames from {path}")
    return hostlist


def consensus_vote(p_rf: str, p_nb: str, p_lr: str) -> Optional[str]:
    """The common label when all three agree, else None"""
    if p_rf == p_nb == p_lr:
        return p_rf
    return None


@dataclass
class LabelingStats:
    flows_in: int = 0
    dropped: Counter = field(default_factory=Counter)
    classes: Counter = field(default_factory=Counter)

    def to_dict(self) -> Dict[str, object]:
        return {
            "flows_in": self.flows_in,
            "dropped": dict(sorted(self.dropped.items())),
            "classes": dict(sorted(self.classes.items())),
        }


def label_instances(
    contexts: Sequence[AppContext],
    nb: Classifier,
    lr: Classifier,
    rf: Classifier,
    config: TopicConfig
) -> List[InstanceLabel]:
    """
    Vote the three intention classifiers on every running instance

    Args:
        contexts: Running instances to label
        nb: Naive Bayes voter
        lr: Logistic regression voter
        rf: Random forest voter
        config: Topic configuration used to build context vectors

    Returns:
        One InstanceLabel per context, FILTERED where the voters disagree
    """
    if not contexts:
        return []
    vectors = [context_vector(c, config) for c in contexts]
    rf_votes = rf.predict_many(vectors)
    nb_votes = nb.predict_many(vectors)
    lr_votes = lr.predict_many(vectors)

    labels = []
    for context, p_rf, p_nb, p_lr in zip(contexts, rf_votes, nb_votes, lr_votes):
        agreed = consensus_vote(p_rf.label, p_nb.label, p_lr.label)
        verdict = InstanceVerdict(agreed) if agreed is not None else InstanceVerdict.FILTERED
        labels.append(InstanceLabel(context.instance_id, verdict, (p_rf.label, p_nb.label, p_lr.label)))

    filtered = sum(1 for label in labels if label.verdict == InstanceVerdict.FILTERED)
    logger.info(f"Labeled {len(labels)} instances; {filtered} filtered by disagreement")
    return labels


def is_location_flow(flow: HttpFlow, keys: CoordinateKeys = CoordinateKeys()) -> bool:
    """Taint annotation, or plaintext coordinates in any request URL"""
    if flow.taint_location:
        return True
    return any(detect_coordinates(request.full_url, keys.lat, keys.lon) is not None for request in flow.requests)


def auto_label_flows(
    flows: Iterable[HttpFlow],
    instance_labels: Iterable[InstanceLabel],
    hostlist: HostnameList,
    stats: Optional[LabelingStats] = None,
    coordinate_keys: CoordinateKeys = CoordinateKeys()
) -> List[FlowLabel]:
    """
    Derive flow classes from instance verdicts and the hostname list

    Flows of filtered instances are dropped. Location flows whose instance
    cannot be resolved are dropped and counted.

    Args:
        flows: Annotated flows
        instance_labels: Verdicts per instance
        hostlist: Ad and analytics hostname suffixes
        stats: Optional tally to fill
        coordinate_keys: Query keys that mark URL coordinates

    Returns:
        One FlowLabel per retained flow, in flow order
    """
    if stats is None:
        stats = LabelingStats()
    verdicts = {label.instance_id: label.verdict for label in instance_labels}

    labels = []
    for flow in flows:
        stats.flows_in += 1
        verdict = verdicts.get(flow.source_instance_id) if flow.source_instance_id else None
        if verdict == InstanceVerdict.FILTERED:
            stats.dropped["filtered_instance"] += 1
            continue

        if not is_location_flow(flow, coordinate_keys):
            flow_class = FlowClass.NON_LOC
        elif verdict is None:
            stats.dropped["unresolved_instance"] += 1
            logger.debug(f"Dropping location flow {flow.flow_id}: instance {flow.source_instance_id!r} unresolved")
            continue
        elif verdict == InstanceVerdict.UNEXPECTED:
            flow_class = FlowClass.ILLEGAL
        elif any(hostlist.matches(request.host) for request in flow.requests):
            flow_class = FlowClass.ILLEGAL
        else:
            flow_class = FlowClass.LEGAL

        stats.classes[flow_class.value] += 1
        labels.append(FlowLabel(flow.flow_id, flow_class))

    logger.info(f"Auto-labeled flows: {stats.to_dict()}")
    return labels
