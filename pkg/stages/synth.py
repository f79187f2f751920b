"""
Synthetic corpus stage
"""
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict

from core.synthetic import SynthConfig, generate_corpus, write_corpus
from utils.config import RunConfig
from utils.errors import DataError


def register(subparsers) -> None:
    parser = subparsers.add_parser("synth", help="Write a synthetic capture corpus with contexts and ground truth")
    parser.add_argument("--out", dest="synth_out", help="Corpus directory (default: <output-dir>/synthetic)")
    parser.add_argument("--instances", type=int, help="Running instances behind the captured flows")
    parser.add_argument("--train-contexts", type=int, dest="train_contexts", help="Labeled contexts for train-context")
    parser.add_argument("--capture-files", type=int, dest="capture_files", help="Number of pcap files to split flows over")
    parser.set_defaults(handler=synth_stage)


def synth_stage(config: RunConfig, args=None) -> Dict[str, Any]:
    """Generate the corpus with the run seed; the written run_config.json drives the other stages"""
    settings = replace(SynthConfig(), seed=config.seed)
    for name in ("instances", "train_contexts", "capture_files"):
        value = getattr(args, name, None)
        if value is not None:
            if value < 1:
                raise DataError(f"--{name.replace('_', '-')} must be at least 1, got {value}")
            settings = replace(settings, **{name: value})

    out_dir = getattr(args, "synth_out", None) or str(Path(config.output_dir) / "synthetic")
    paths = write_corpus(generate_corpus(settings), Path(out_dir))
    return {"run_config": paths["run_config"], "captures": len(paths["captures"])}
