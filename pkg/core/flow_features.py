"""
Statistical and lexical flow features
"""
from __future__ import annotations

import re
from typing import Dict, Iterable, Iterator, List, Mapping, NamedTuple, Optional

import numpy as np
from scipy import stats

from core.flow_capture import Direction, HttpFlow, HttpRequest

STAT_BLOCKS = ("size_all", "size_up", "size_down", "interval")
STAT_NAMES = ("min", "max", "median", "mean", "std", "skew", "kurtosis")

_TOKEN_SPLIT_RE = re.compile(r'[\W_]+')


class DistributionStats(NamedTuple):
    min: float
    max: float
    median: float
    mean: float
    std: float
    skew: float
    kurtosis: float


class StatVector(NamedTuple):
    """The 31 statistical features of one flow, in fixed order"""
    tcp_count: int
    uplink_tcp_count: int
    http_count: int
    size_all_min: float
    size_all_max: float
    size_all_median: float
    size_all_mean: float
    size_all_std: float
    size_all_skew: float
    size_all_kurtosis: float
    size_up_min: float
    size_up_max: float
    size_up_median: float
    size_up_mean: float
    size_up_std: float
    size_up_skew: float
    size_up_kurtosis: float
    size_down_min: float
    size_down_max: float
    size_down_median: float
    size_down_mean: float
    size_down_std: float
    size_down_skew: float
    size_down_kurtosis: float
    interval_min: float
    interval_max: float
    interval_median: float
    interval_mean: float
    interval_std: float
    interval_skew: float
    interval_kurtosis: float


STAT_FIELDS = StatVector._fields


class SparseFeatureVector(Mapping[str, float]):
    """
    Named numeric features; zero-valued entries are never stored

    Binary features carry value 1.
    """

    __slots__ = ("_entries",)

    def __init__(self, entries: Optional[Mapping[str, float] | Iterable[tuple]] = None):
        items = dict(entries or {})
        clean = {}
        for name, value in items.items():
            if not name:
                raise ValueError("Feature names must be non-empty")
            value = float(value)
            if value != 0.0:
                clean[name] = value
        self._entries: Dict[str, float] = clean

    @classmethod
    def binary(cls, names: Iterable[str]) -> SparseFeatureVector:
        return cls({name: 1.0 for name in names})

    def __getitem__(self, name: str) -> float:
        return self._entries[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other) -> bool:
        if isinstance(other, Mapping):
            return self._entries == dict(other)
        return NotImplemented

    def __hash__(self):
        return hash(frozenset(self._entries.items()))

    def __repr__(self) -> str:
        return f"SparseFeatureVector({dict(sorted(self._entries.items()))!r})"

    def union(self, other: Mapping[str, float]) -> SparseFeatureVector:
        """Merge two vectors; entries of self win on name collisions"""
        merged = dict(other)
        merged.update(self._entries)
        return SparseFeatureVector(merged)

    def to_text(self) -> str:
        """Space-separated name:value list in name order"""
        return " ".join(f"{name}:{_format_value(value)}" for name, value in sorted(self._entries.items()))

    @classmethod
    def from_text(cls, text: str) -> SparseFeatureVector:
        entries = {}
        for item in text.split():
            name, _, value = item.rpartition(":")
            entries[name] = float(value)
        return cls(entries)


def _format_value(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(value)


def distribution_stats(values: Iterable[float]) -> DistributionStats:
    """
    Seven summary statistics of a distribution, population moments

    Empty input gives all zeros; a zero-variance input reports
    skewness and kurtosis as 0.

    Args:
        values: Numbers

    Returns:
        (min, max, median, mean, std, skew, kurtosis)
    """
    data = np.asarray(list(values), dtype=float)
    if data.size == 0:
        return DistributionStats(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    minimum, maximum = float(data.min()), float(data.max())
    median, mean = float(np.median(data)), float(data.mean())
    if minimum == maximum:
        return DistributionStats(minimum, maximum, minimum, minimum, 0.0, 0.0, 0.0)

    std = float(data.std())
    skew = float(stats.skew(data, bias=True))
    kurtosis = float(stats.kurtosis(data, fisher=False, bias=True))
    return DistributionStats(
        minimum, maximum, median, mean, std,
        skew if np.isfinite(skew) else 0.0,
        kurtosis if np.isfinite(kurtosis) else 0.0,
    )


def stat_features(flow: HttpFlow) -> StatVector:
    """
    Compute the 31 statistical features of a flow

    Sizes are total frame lengths; intervals are consecutive timestamp
    differences over all packets, in milliseconds.

    Args:
        flow: Sessionized flow

    Returns:
        StatVector
    """
    packets = flow.packets
    sizes_all = [p.total_len for p in packets]
    sizes_up = [p.total_len for p in packets if p.direction == Direction.UPLINK]
    sizes_down = [p.total_len for p in packets if p.direction == Direction.DOWNLINK]
    timestamps = np.array([p.timestamp for p in packets], dtype=float)
    intervals = np.diff(timestamps) * 1000.0

    values: List[float] = [
        len(packets),
        len(sizes_up),
        sum(1 for p in packets if p.has_http_layer),
    ]
    for block in (sizes_all, sizes_up, sizes_down, intervals):
        values.extend(distribution_stats(block))
    return StatVector(*values)


def tokenize_url(url: str) -> List[str]:
    """Lowercase and split on every non-alphanumeric character"""
    return [token for token in _TOKEN_SPLIT_RE.split(url.lower()) if token]


def lexical_features(request: HttpRequest) -> SparseFeatureVector:
    """
    Bag-of-words URL features of one request

    Args:
        request: Parsed HTTP request

    Returns:
        host:<tok> and path:<tok> binary features plus len_host, len_url, num_dots
    """
    entries: Dict[str, float] = {f"host:{t}": 1.0 for t in tokenize_url(request.host)}
    entries.update({f"path:{t}": 1.0 for t in tokenize_url(request.path)})
    entries["len_host"] = len(request.host)
    entries["len_url"] = len(request.full_url)
    entries["num_dots"] = request.full_url.count(".")
    return SparseFeatureVector(entries)


def flow_lexical_features(flow: HttpFlow) -> SparseFeatureVector:
    """Union of the token features of every request; numeric features from the first"""
    if not flow.requests:
        return SparseFeatureVector()
    vector = lexical_features(flow.requests[0])
    for request in flow.requests[1:]:
        tokens = {name: value for name, value in lexical_features(request).items() if ":" in name}
        vector = vector.union(tokens)
    return vector


def stat_vector_features(vector: StatVector) -> SparseFeatureVector:
    """StatVector as named features (field names)"""
    return SparseFeatureVector(vector._asdict())
