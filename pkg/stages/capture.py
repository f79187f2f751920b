"""
Capture stages: sessionize pcaps into HTTP flows, then featurize the flows
"""
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict

import pandas as pd

from core.flow_capture import CaptureDiagnostics, HttpFlow, apply_sidecar, flow_to_record, load_sidecar, sessionize_capture
from core.flow_features import STAT_FIELDS, flow_lexical_features, stat_features
from stages.common import FEATURE_COLUMNS, collect_captures, load_flows, output_handler, renumber_sessions
from utils.config import RunConfig
from utils.logger import get_logger

logger = get_logger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("sessionize", help="Reconstruct HTTP flows from pcap captures")
    parser.add_argument("captures", nargs="*", help="pcap files or directories (default: config captures)")
    parser.add_argument("--sidecar", help="JSONL of per-flow instance ids and taint verdicts")
    parser.add_argument("--device-ip", action="append", dest="device_ips", help="Address of the capturing device")
    parser.add_argument("--idle-timeout", type=float, dest="idle_timeout", help="Seconds of silence that end a session")
    parser.set_defaults(handler=sessionize_stage)

    parser = subparsers.add_parser("featurize", help="Compute statistical and lexical features per flow")
    parser.set_defaults(handler=featurize_stage)


def sessionize_stage(config: RunConfig, args=None) -> Dict[str, Any]:
    """Read every capture, sessionize per file in parallel, annotate from the sidecar"""
    config.require_valid(("captures",))
    files = collect_captures(config.captures)
    file_handler = output_handler(config)

    def read_one(path: Path):
        return sessionize_capture(path, config.idle_timeout, config.device_ips)

    with ThreadPoolExecutor(max_workers=config.jobs) as pool:
        results = list(pool.map(read_one, files))

    diagnostics = CaptureDiagnostics()
    flows = []
    for file_flows, file_diagnostics in results:
        flows.extend(file_flows)
        diagnostics.merge(file_diagnostics)
    flows = renumber_sessions(flows)

    inputs = list(files)
    if config.sidecar:
        config.require_valid(("sidecar",))
        flows = apply_sidecar(flows, load_sidecar(Path(config.sidecar)))
        inputs.append(Path(config.sidecar))

    output = file_handler.save_records("flows.jsonl", "flows", (flow_to_record(f) for f in flows))
    summary = {"captures": len(files), "flows": len(flows), "diagnostics": diagnostics.to_dict()}
    file_handler.save_manifest("sessionize", inputs, [output], config.to_dict(), config.seed, summary)
    logger.info(f"Sessionized {len(files)} capture(s) into {len(flows)} flows; skipped {diagnostics.total_skipped} frames")
    return summary


def _feature_row(flow: HttpFlow) -> Dict[str, Any]:
    row: Dict[str, Any] = {"flow_id": flow.flow_id}
    row.update(stat_features(flow)._asdict())
    row["lexical"] = flow_lexical_features(flow).to_text()
    return row


def featurize_stage(config: RunConfig, args=None) -> Dict[str, Any]:
    """features.tsv: one row per flow, the statistical columns then the lexical features as text"""
    file_handler = output_handler(config)
    source = file_handler.require("flows.jsonl")
    flows = load_flows(file_handler)

    with ThreadPoolExecutor(max_workers=config.jobs) as pool:
        rows = list(pool.map(_feature_row, flows))
    frame = pd.DataFrame(rows, columns=list(FEATURE_COLUMNS))

    output = file_handler.save_table("features.tsv", frame)
    summary = {"flows": len(flows), "stat_fields": len(STAT_FIELDS)}
    file_handler.save_manifest("featurize", [source], [output], config.to_dict(), config.seed, summary)
    return summary
