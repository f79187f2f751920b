"""
End-to-end run: every stage in order against one output directory
"""
from typing import Any, Callable, Dict, List, Tuple

from stages.capture import featurize_stage, sessionize_stage
from stages.flows import classify_stage, train_flow_stage
from stages.intent import label_stage, train_context_stage
from stages.reports import cdf_stage, evaluate_stage
from utils.config import RunConfig
from utils.logger import get_logger

logger = get_logger(__name__)


def stage_sequence(config: RunConfig) -> List[Tuple[str, Callable]]:
    """Stages of a full run; train-context is skipped when instance labels come from ground truth"""
    stages = [("sessionize", sessionize_stage), ("featurize", featurize_stage)]
    if config.instance_labels == "voted":
        stages.append(("train-context", train_context_stage))
    stages.extend([
        ("label", label_stage),
        ("train-flow", train_flow_stage),
        ("classify", classify_stage),
        ("evaluate", evaluate_stage),
        ("cdf", cdf_stage),
    ])
    return stages


def register(subparsers) -> None:
    parser = subparsers.add_parser("run", help="Run every stage end to end")
    parser.set_defaults(handler=run_pipeline)


def run_pipeline(config: RunConfig, args=None) -> Dict[str, Any]:
    summaries: Dict[str, Any] = {}
    for name, handler in stage_sequence(config):
        logger.info(f"Stage {name} starting")
        summaries[name] = handler(config, None)
        logger.info(f"Stage {name} done")
    return summaries
