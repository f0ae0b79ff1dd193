# fsdlab/commands/run.py
import logging
from pathlib import Path

from fsdlab.commands import EXIT_FAILED, EXIT_OK, handles_errors
from fsdlab.config import load_experiment_config
from fsdlab.services.reports import emit_reports
from fsdlab.services.sweep import run_sweep

logger = logging.getLogger(__name__)


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("run", parents=parents, help="Run one sweep and write reports")
    parser.add_argument("--config", required=True, type=Path, help="Experiment config (JSON or YAML)")
    parser.add_argument("--out", type=Path, default=None, help="Report directory (default: config output_dir)")
    parser.set_defaults(handler=handle_run)


@handles_errors
def handle_run(args) -> int:
    config = load_experiment_config(args.config)
    if args.seed is not None:
        logger.info(f"--seed {args.seed} replaces config seeds {config.seeds}")
        config = config.model_copy(update={"seeds": [args.seed]})
    result = run_sweep(config, workers=args.workers, cost_ratio=args.cost_ratio)
    outdir = args.out or config.output_dir
    emit_reports(result, outdir)
    if result.errors:
        logger.error(f"{len(result.errors)} of {len(result.rows)} sweep rows failed; see {outdir}/errors.jsonl")
        return EXIT_FAILED
    return EXIT_OK
