import argparse
import logging
import sys
from typing import List, Optional

from fsdlab import __version__
from fsdlab.commands import corpus, run, serve, tune, verify
from fsdlab.config import settings

logger = logging.getLogger(__name__)


def _global_flags(defaults: bool) -> argparse.ArgumentParser:
    # accepted before and after the subcommand; subcommand copies only override when given
    default = None if defaults else argparse.SUPPRESS
    flags = argparse.ArgumentParser(add_help=False)
    flags.add_argument("--seed", type=int, default=default, help=f"Base seed (default {settings.SEED})")
    flags.add_argument("--workers", type=int, default=default, help=f"Sweep worker processes (default {settings.WORKERS})")
    flags.add_argument("--cost-ratio", type=float, default=default, help=f"Draft-call cost (default {settings.COST_RATIO})")
    flags.add_argument("--log-level", default=default, help=f"Logging level (default {settings.LOG_LEVEL})")
    return flags


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fsdlab",
        description="Speculative and fuzzy speculative decoding lab",
        parents=[_global_flags(defaults=True)],
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    parents = [_global_flags(defaults=False)]
    for module in (run, tune, verify, serve, corpus):
        module.register(subparsers, parents)
    return parser


def configure_logging(level: Optional[str]) -> None:
    # stderr only: the stdio logit server owns stdout
    logging.basicConfig(
        level=(level or settings.LOG_LEVEL).upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
        force=True,
    )


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    if args.workers is not None and args.workers < 1:
        logger.error("--workers must be at least 1")
        return 2
    if args.cost_ratio is not None and args.cost_ratio < 0:
        logger.error("--cost-ratio must be non-negative")
        return 2
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
