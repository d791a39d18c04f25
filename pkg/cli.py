"""
cdbound - Command Line
Batch front end: `run CONFIG` executes one experiment, `defaults` prints the
built-in config. Exit codes: 0 ok, 2 bound violated, 3 solver unconverged,
4 config error.
"""
import argparse
import json
import logging
import sys
from typing import List, Optional

from config import default_config, load_config
from engine import EXIT_CONFIG, EXIT_UNCONVERGED, ExperimentEngine
from errors import (
    ConfigError, ConvergenceError, DomainError, InsufficientTermsError, IntegrabilityError, StateValidationError,
    UnsupportedRegimeError,
)

logger = logging.getLogger("cdbound")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="cdbound", description="Fidelity bounds for CD-driven dissipative spins.")
    parser.add_argument("--log-level", default="INFO", choices=LOG_LEVELS)
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run the experiment described by a JSON config.")
    run.add_argument("config", help="Path to the experiment config (JSON).")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                     help="Override a config key, e.g. --set solver.N_c=8 (repeatable).")
    run.add_argument("--output", default=None, help="Output CSV path (overrides output.path).")
    run.add_argument("--workers", type=int, default=None, help="Worker-pool size (overrides workers).")
    run.add_argument("--log-level", default=argparse.SUPPRESS, choices=LOG_LEVELS,
                     help="Log level; also accepted before the command.")

    commands.add_parser("defaults", help="Print the built-in default config.")
    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT, stream=sys.stderr)

    if args.command == "defaults":
        print(json.dumps(default_config(), indent=2, sort_keys=True))
        return 0

    overrides = list(args.overrides)
    if args.output:
        overrides.append(f"output.path={json.dumps(args.output)}")
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    try:
        config = load_config(args.config, overrides)
        outcome = ExperimentEngine(config).run()
    except ConfigError as error:
        for message in error.errors:
            print(message, file=sys.stderr)
        return EXIT_CONFIG
    except (DomainError, UnsupportedRegimeError) as error:
        print(f"ERROR: {error}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as error:
        print(f"ERROR: {error} (deltas {error.deltas})", file=sys.stderr)
        return EXIT_UNCONVERGED
    except (InsufficientTermsError, IntegrabilityError, StateValidationError) as error:
        print(f"ERROR: {type(error).__name__}: {error}", file=sys.stderr)
        return EXIT_UNCONVERGED

    logger.info("%s: wrote %s (exit %d)", outcome.kind, outcome.path, outcome.exit_code)
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
