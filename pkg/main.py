import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from commands import SUBCOMMANDS
from errors import StageFailed, WillmoreLabError
from settings import get_settings

logger = logging.getLogger("willmore_lab")

EXIT_OK = 0
EXIT_CHECKS_FAILED = 1
EXIT_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="willmore-lab",
                                     description="Numerical laboratory for 8pi Willmore bubble trees.")
    parser.add_argument("--log-level", default=None, help="overrides WILLMORE_LOG_LEVEL")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in SUBCOMMANDS:
        command.register(subparsers)
    return parser


def configure_logging(level: Optional[str] = None):
    logging.basicConfig(level=(level or get_settings().log_level).upper(), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except StageFailed as exc:
        print(f"error: {exc.detail}", file=sys.stderr)
        return EXIT_ERROR
    except WillmoreLabError as exc:
        print(f"error: {type(exc).__name__}: {exc.detail}", file=sys.stderr)
        return EXIT_ERROR
    except ValidationError as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
