"""
Command-line entry point for locintent
"""
import argparse
import sys
from dataclasses import fields
from typing import List, Optional

from dotenv import load_dotenv
from utils.logger import setup_logger

# Load environment variables
load_dotenv()

from stages import capture, flows, intent, pipeline, reports, synth
from utils.config import RunConfig, load_run_config
from utils.errors import DataError, LocIntentError

RUN_CONFIG_FIELDS = frozenset(f.name for f in fields(RunConfig))
STAGE_MODULES = (capture, intent, flows, reports, synth, pipeline)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="locintent",
        description="Detect location-leaking network flows that run against the user's intention",
    )
    parser.add_argument("--config", help="RunConfig JSON file")
    parser.add_argument("--seed", type=int, help="Seed for every stochastic component (default 1337)")
    parser.add_argument("--jobs", type=int, help="Parallel workers inside a stage (default 1)")
    parser.add_argument("--output-dir", dest="output_dir", help="Artifact directory (default: output)")
    parser.add_argument("--log-level", dest="log_level", help="DEBUG, INFO, WARNING or ERROR")

    # Register stages
    subparsers = parser.add_subparsers(dest="stage", metavar="stage", required=True)
    for module in STAGE_MODULES:
        module.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logger = setup_logger(log_level=args.log_level)

    overrides = {
        name: value for name, value in vars(args).items()
        if name in RUN_CONFIG_FIELDS and value is not None and value != []
    }
    try:
        config = load_run_config(args.config, overrides)
        is_valid, error = config.validate()
        if not is_valid:
            raise DataError(error)

        logger.info(f"Running {args.stage} (seed {config.seed}, jobs {config.jobs}, output {config.output_dir})")
        args.handler(config, args)
        logger.info(f"{args.stage} finished")
        return 0
    except LocIntentError as e:
        logger.error(f"{args.stage} failed: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"{args.stage} failed on file access: {e}")
        return DataError.exit_code


if __name__ == '__main__':
    sys.exit(main())
