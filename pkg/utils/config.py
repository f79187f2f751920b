"""
Run configuration loaded from a JSON file and command-line overrides
"""
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional

from utils.errors import DataError
from utils.validators import validate_paths_exist

DEFAULT_SEED = 1337
PACKAGE_ROOT = Path(__file__).resolve().parent.parent
DEFAULT_TOPIC_CONFIG = PACKAGE_ROOT / "config" / "topics.json"
DEFAULT_HOSTLIST = PACKAGE_ROOT / "config" / "ad_hosts.txt"

MODES = ("supervised", "one-class", "both")
FEATURE_SETS = ("statistical", "lexical", "both")
INSTANCE_LABEL_SOURCES = ("voted", "truth")


@dataclass
class RunConfig:
    """
    Settings shared by every stage

    captures may name pcap files or directories of them. Hyperparameter
    override sections are passed to the matching trainer config.
    """
    captures: List[str] = field(default_factory=list)
    sidecar: Optional[str] = None
    contexts: Optional[str] = None
    context_labels: Optional[str] = None
    test_contexts: Optional[str] = None
    instance_truth: Optional[str] = None
    topic_config: str = str(DEFAULT_TOPIC_CONFIG)
    hostlist: str = str(DEFAULT_HOSTLIST)
    ground_truth: Optional[str] = None
    output_dir: str = "output"
    device_ips: List[str] = field(default_factory=list)
    seed: int = DEFAULT_SEED
    jobs: int = 1
    folds: int = 10
    mode: str = "both"
    feature_set: str = "both"
    instance_labels: str = "voted"
    idle_timeout: float = 60.0
    coordinate_keys: Dict[str, List[str]] = field(default_factory=dict)
    nb: Dict[str, Any] = field(default_factory=dict)
    lr: Dict[str, Any] = field(default_factory=dict)
    rf: Dict[str, Any] = field(default_factory=dict)
    ocsvm: Dict[str, Any] = field(default_factory=dict)

    def validate(self, require: tuple = ()) -> tuple[bool, Optional[str]]:
        """
        Check enumerations, numeric ranges and the existence of required paths

        Args:
            require: Names of path fields the calling stage reads

        Returns:
            Tuple of (is_valid, error_message)
        """
        if self.mode not in MODES:
            return False, f"mode must be one of {MODES}, got {self.mode!r}"
        if self.feature_set not in FEATURE_SETS:
            return False, f"feature_set must be one of {FEATURE_SETS}, got {self.feature_set!r}"
        if self.instance_labels not in INSTANCE_LABEL_SOURCES:
            return False, f"instance_labels must be one of {INSTANCE_LABEL_SOURCES}, got {self.instance_labels!r}"
        if self.jobs < 1:
            return False, "jobs must be at least 1"
        if self.folds < 2:
            return False, "folds must be at least 2"
        if self.idle_timeout <= 0:
            return False, "idle_timeout must be positive"
        unknown_axes = sorted(set(self.coordinate_keys) - {"lat", "lon"})
        if unknown_axes:
            return False, f"coordinate_keys accepts only lat and lon, got {unknown_axes}"
        if any(not names for names in self.coordinate_keys.values()):
            return False, "coordinate_keys sets must not be empty"

        missing = [name for name in require if not getattr(self, name)]
        if missing:
            return False, f"Missing required setting(s): {', '.join(missing)}"
        paths = []
        for name in require:
            value = getattr(self, name)
            if name == "output_dir":
                continue
            paths.extend(value if isinstance(value, list) else [value])
        return validate_paths_exist(Path(p) for p in paths)

    def require_valid(self, require: tuple = ()) -> None:
        is_valid, error = self.validate(require)
        if not is_valid:
            raise DataError(error)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Build the run configuration

    Precedence: command-line overrides, then LOCINTENT_OUTPUT_DIR for the
    output directory, then the config file, then defaults.

    Args:
        path: Optional JSON config file
        overrides: Non-None values from the command line

    Returns:
        RunConfig
    """
    data: Dict[str, Any] = {}
    if path:
        config_path = Path(path)
        if not config_path.exists():
            raise DataError(f"Config file not found: {config_path}")
        try:
            data = json.loads(config_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise DataError(f"{config_path}: invalid JSON config: {e}")
        if not isinstance(data, dict):
            raise DataError(f"{config_path}: config must be a JSON object")

    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise DataError(f"Unknown config key(s): {', '.join(unknown)}")

    env_output = os.getenv("LOCINTENT_OUTPUT_DIR")
    if env_output:
        data["output_dir"] = env_output
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value

    if isinstance(data.get("captures"), str):
        data["captures"] = [data["captures"]]
    try:
        return RunConfig(**data)
    except TypeError as e:
        raise DataError(f"Invalid run configuration: {e}")
