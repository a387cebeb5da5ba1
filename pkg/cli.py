import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from config import Config
from experiment_service import EXIT_INVALID, ExperimentService, describe_validation_error
from models import RunConfig

logger = logging.getLogger(__name__)

COMMANDS = ("solve", "sweep", "cones", "viscosity-check", "selftest")

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fracplap",
        description="Fractional p-Laplacian eigenvalue systems: solve, sweep in p, and check the p -> infinity limits",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        command = sub.add_parser(name)
        command.add_argument("--config", help="Run configuration JSON file")
        command.add_argument("--output-dir", help="Artifact directory (overrides env and JSON)")
        command.add_argument("--seed", type=int, help="Random seed")
        if name == "selftest":
            continue
        command.add_argument("--p", type=float, help="Exponent p")
        command.add_argument("--n", type=int, help="Interior cells per axis")
        command.add_argument("--max-iter", type=int, help="Solver iteration cap")
        command.add_argument("--tol", type=float, help="Solver tolerance")
        if name == "viscosity-check":
            command.add_argument("--source", help="Directory holding a sweep.json (default: output dir)")
    return parser

def _set(data: Dict[str, Any], block: str, key: str, value: Any) -> None:
    if value is not None:
        data.setdefault(block, {})[key] = value

def load_config(args: argparse.Namespace) -> RunConfig:
    """Read the JSON config, apply flag overrides, validate"""
    data: Dict[str, Any] = {}
    if args.config:
        with open(args.config) as handle:
            data = json.load(handle)
        if not isinstance(data, dict):
            raise ValueError("config must be a JSON object")
    _set(data, "problem", "p", getattr(args, "p", None))
    _set(data, "domain", "n", getattr(args, "n", None))
    _set(data, "solver", "max_iter", getattr(args, "max_iter", None))
    _set(data, "solver", "tol", getattr(args, "tol", None))
    _set(data, "solver", "seed", args.seed)
    return RunConfig.model_validate(data)

def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    # Configure logging
    logging.basicConfig(
        level=getattr(logging, Config.LOG_LEVEL.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        Config.validate()
        config = load_config(args)
    except ValidationError as e:
        message = describe_validation_error(e)
        logger.error(f"Configuration error: {message}")
        print(f"Invalid configuration: {message}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, OSError) as e:
        logger.error(f"Configuration error: {str(e)}")
        print(f"Invalid configuration: {str(e)}", file=sys.stderr)
        return EXIT_INVALID

    service = ExperimentService(config, output_dir=args.output_dir)
    if args.command == "solve":
        result = service.run_solve()
    elif args.command == "sweep":
        result = service.run_sweep()
    elif args.command == "cones":
        result = service.run_cones()
    elif args.command == "viscosity-check":
        result = service.run_viscosity_check(args.source)
    else:
        result = service.run_selftest(args.seed)

    print(result.message)
    for artifact in result.artifacts:
        print(f"  {artifact}")
    return result.exit_code

if __name__ == "__main__":
    sys.exit(main())
