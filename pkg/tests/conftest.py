"""
Shared fixtures and builders for the locintent test suite
"""
import json
from dataclasses import replace
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple

import pytest

from core.context_features import load_topic_config
from core.flow_capture import Direction, FourTuple, HttpFlow, PacketMeta, parse_http
from core.synthetic import SynthConfig, generate_corpus, write_corpus
from utils.config import DEFAULT_TOPIC_CONFIG

DEVICE = "10.0.0.2"
SERVER = "93.184.1.10"

# Small but class-complete corpus; every class keeps well over ten flows for 10-fold CV.
SMALL_CORPUS = SynthConfig(train_contexts=40, instances=60, capture_files=2, seed=7)


@pytest.fixture(autouse=True)
def _isolated_logs(tmp_path, monkeypatch):
    monkeypatch.setenv("LOCINTENT_LOG_DIR", str(tmp_path / "logs"))
    monkeypatch.delenv("LOCINTENT_OUTPUT_DIR", raising=False)


@pytest.fixture(scope="session")
def topic_config():
    return load_topic_config(DEFAULT_TOPIC_CONFIG)


def packet(
    timestamp: float,
    direction: Direction,
    total_len: int,
    payload: bytes = b"",
    sport: int = 40000,
    dport: int = 80
) -> PacketMeta:
    """One packet of the DEVICE:sport > SERVER:dport conversation"""
    uplink = FourTuple(DEVICE, sport, SERVER, dport)
    return PacketMeta(
        timestamp=timestamp,
        direction=direction,
        tcp_payload_len=len(payload),
        total_len=max(total_len, len(payload)),
        has_http_layer=payload.startswith((b"GET ", b"POST ", b"HTTP/")),
        four_tuple=uplink if direction == Direction.UPLINK else uplink.reversed(),
        payload=payload if direction == Direction.UPLINK else b"",
    )


def make_flow(
    packets: Sequence[Tuple[float, Direction, int, bytes]],
    instance_id: Optional[str] = None,
    taint: Optional[bool] = None,
    sport: int = 40000,
    dport: int = 80
) -> HttpFlow:
    """Flow from (timestamp, direction, total_len, payload) tuples, requests parsed"""
    metas = tuple(packet(t, d, n, p, sport, dport) for t, d, n, p in packets)
    flow = HttpFlow(
        key=FourTuple(DEVICE, sport, SERVER, dport),
        packets=metas,
        source_instance_id=instance_id,
        taint_location=taint,
    )
    return replace(flow, requests=tuple(parse_http(flow)))


def http_get(host: str, path: str) -> bytes:
    return f"GET {path} HTTP/1.1\r\nHost: {host}\r\n\r\n".encode("ascii")


def write_jsonl(path: Path, records: Iterable[dict]) -> Path:
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def synthetic_inputs(tmp_path_factory):
    """Small synthetic corpus written once per session; returns the input paths"""
    out_dir = tmp_path_factory.mktemp("synthetic")
    return write_corpus(generate_corpus(SMALL_CORPUS), out_dir)


def fast_run_config(paths: dict, target: Path, **extra) -> Path:
    """Copy of the corpus run config with a lighter forest for quick end-to-end runs"""
    data = json.loads(Path(paths["run_config"]).read_text(encoding="utf-8"))
    data.update({"rf": {"n_trees": 15}, "folds": 10})
    data.update(extra)
    target.write_text(json.dumps(data), encoding="utf-8")
    return target
