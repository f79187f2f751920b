"""
File operations for stage artifacts: flows, features, labels, models, reports
"""
import hashlib
import io
import json
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import pandas as pd

from utils.errors import DataError, SchemaError
from utils.logger import get_logger


SCHEMA_VERSION = 1
TOOL_VERSION = "1.0.0"

# artifact file name -> stage that produces it
ARTIFACT_STAGES = {
    "flows.jsonl": "sessionize",
    "features.tsv": "featurize",
    "context_model.json": "train-context",
    "instance_labels.jsonl": "label",
    "flow_labels.jsonl": "label",
    "label_summary.json": "label",
    "bundle.json": "train-flow",
    "verdicts.jsonl": "classify",
    "report.json": "evaluate",
}


def file_digest(path: Path) -> str:
    """SHA-256 hex digest of a file's bytes"""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def dumps_canonical(data: Any) -> str:
    """Deterministic JSON text: sorted keys, fixed indentation, trailing newline"""
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def atomic_write_text(path: Path, content: str) -> Path:
    """
    Write text through a temporary file in the same directory and rename it

    Args:
        path: Destination file
        content: Text content

    Returns:
        Destination path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(content)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def read_records(path: Path) -> List[Dict[str, Any]]:
    """
    Read a line-delimited JSON file; a leading schema header record is checked and dropped

    Args:
        path: JSONL file

    Returns:
        List of record dictionaries
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"Input file not found: {path}")

    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{line_no}: invalid JSON record: {e}")
            if line_no == 1 and "schema_version" in record and "kind" in record:
                if record["schema_version"] != SCHEMA_VERSION:
                    raise SchemaError(
                        f"{path}: schema version {record['schema_version']} "
                        f"does not match supported version {SCHEMA_VERSION}"
                    )
                continue
            records.append(record)
    return records


class FileHandler:
    """Handle artifact files for one output directory"""

    def __init__(self, base_dir: str = "output"):
        self.base_dir = Path(base_dir)
        self.logger = get_logger(__name__)
        self._ensure_directories()

    def _ensure_directories(self):
        """Create necessary directories if they don't exist"""
        self.base_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        """Absolute path of an artifact inside the output directory"""
        return self.base_dir / name

    def require(self, name: str) -> Path:
        """
        Path of an upstream artifact, failing with the stage that produces it

        Args:
            name: Artifact file name

        Returns:
            Path to the artifact
        """
        file_path = self.path(name)
        if not file_path.exists():
            stage = ARTIFACT_STAGES.get(name, "an upstream")
            raise DataError(f"Missing upstream artifact {file_path}; run the '{stage}' stage first")
        return file_path

    def save_json(self, name: str, kind: str, data: Dict[str, Any]) -> Path:
        """Save a JSON artifact with its schema version and kind"""
        payload = {"schema_version": SCHEMA_VERSION, "kind": kind, **data}
        file_path = atomic_write_text(self.path(name), dumps_canonical(payload))
        self.logger.info(f"Wrote {kind} artifact {file_path}")
        return file_path

    def load_json(self, name: str, kind: str) -> Dict[str, Any]:
        """Load a JSON artifact, checking schema version and kind"""
        file_path = self.require(name)
        try:
            data = json.loads(file_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise SchemaError(f"{file_path} is not a valid {kind} artifact: {e}")
        check_schema(data, kind, file_path)
        return data

    def save_records(self, name: str, kind: str, records: Iterable[Dict[str, Any]]) -> Path:
        """Save line-delimited records behind a schema header line"""
        lines = [json.dumps({"schema_version": SCHEMA_VERSION, "kind": kind}, sort_keys=True)]
        lines.extend(json.dumps(r, sort_keys=True, ensure_ascii=False) for r in records)
        file_path = atomic_write_text(self.path(name), "\n".join(lines) + "\n")
        self.logger.info(f"Wrote {len(lines) - 1} {kind} records to {file_path}")
        return file_path

    def load_records(self, name: str) -> List[Dict[str, Any]]:
        """Load line-delimited records written by save_records"""
        return read_records(self.require(name))

    def save_table(self, name: str, frame: pd.DataFrame) -> Path:
        """Save a tab-separated table whose first row carries the schema version"""
        buffer = io.StringIO()
        buffer.write(f"#schema_version={SCHEMA_VERSION}\n")
        frame.to_csv(buffer, sep="\t", index=False, lineterminator="\n", float_format="%.17g")
        file_path = atomic_write_text(self.path(name), buffer.getvalue())
        self.logger.info(f"Wrote table {file_path} ({len(frame)} rows)")
        return file_path

    def load_table(self, name: str) -> pd.DataFrame:
        """Load a table written by save_table"""
        file_path = self.require(name)
        with open(file_path, "r", encoding="utf-8") as f:
            header = f.readline().strip()
            if header != f"#schema_version={SCHEMA_VERSION}":
                raise SchemaError(f"{file_path}: unexpected schema row {header!r}")
            return pd.read_csv(f, sep="\t", keep_default_na=False)

    def save_text(self, name: str, content: str) -> Path:
        """Save a human-readable text artifact"""
        return atomic_write_text(self.path(name), content)

    def save_manifest(
        self,
        stage: str,
        inputs: Iterable[Path],
        outputs: Iterable[Path],
        config: Dict[str, Any],
        seed: int,
        summary: Optional[Dict[str, Any]] = None
    ) -> Path:
        """
        Record what a stage consumed and produced

        Args:
            stage: Stage name
            inputs: Input files (digested)
            outputs: Output files (digested)
            config: Effective configuration
            seed: Seed used by the stage
            summary: Stage counts worth keeping (skipped packets, dropped flows)

        Returns:
            Path to manifest file
        """
        manifest = {
            "stage": stage,
            "tool_version": TOOL_VERSION,
            "seed": seed,
            "config": config,
            "inputs": {str(p): file_digest(Path(p)) for p in inputs if p is not None and Path(p).is_file()},
            "outputs": {str(p): file_digest(Path(p)) for p in outputs},
            "summary": summary or {},
            "created_at": datetime.now(timezone.utc).isoformat(),
        }
        return self.save_json(f"manifest_{stage}.json", "manifest", manifest)


def check_schema(data: Dict[str, Any], kind: str, source: Any) -> None:
    """Raise SchemaError unless data declares the supported version and expected kind"""
    if not isinstance(data, dict):
        raise SchemaError(f"{source}: expected a JSON object")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(
            f"{source}: schema version {data.get('schema_version')!r} "
            f"does not match supported version {SCHEMA_VERSION}"
        )
    if data.get("kind") != kind:
        raise SchemaError(f"{source}: expected a {kind} artifact, found {data.get('kind')!r}")
