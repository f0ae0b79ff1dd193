# fsdlab/commands/verify.py
import logging
from pathlib import Path

from fsdlab.commands import EXIT_FAILED, EXIT_OK, handles_errors
from fsdlab.config import settings
from fsdlab.services.reports import write_verify_reports
from fsdlab.services.verification import SUITES, all_passed, run_suite

logger = logging.getLogger(__name__)


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("verify", parents=parents, help="Run oracle verification suites")
    parser.add_argument("--suite", required=True, choices=["all", *SUITES])
    parser.add_argument("--out", type=Path, default=None, help="Directory for verify.jsonl")
    parser.set_defaults(handler=handle_verify)


@handles_errors
def handle_verify(args) -> int:
    seed = args.seed if args.seed is not None else settings.SEED
    reports = run_suite(args.suite, seed=seed)
    outdir = args.out or Path(settings.DEFAULT_OUTPUT_DIR)
    path = write_verify_reports(reports, Path(outdir) / "verify.jsonl")

    failed = [r for r in reports if not r.passed]
    for r in failed:
        logger.error(f"FAILED {r.suite}/{r.check} instance={r.instance}")
    print(f"{len(reports)} checks, {len(failed)} failed, {sum(r.flagged for r in reports)} flagged -> {path}")
    return EXIT_OK if all_passed(reports) else EXIT_FAILED
