# fsdlab/commands/tune.py
import logging
from pathlib import Path
from typing import List

from fsdlab.commands import EXIT_OK, handles_errors
from fsdlab.config import load_experiment_config, settings
from fsdlab.errors import ConfigError, InsufficientCorpus
from fsdlab.models.schemas import DraftOnlyPolicy, ExperimentConfig, FSDPolicy, TargetOnlyPolicy
from fsdlab.services.corpus import Corpus, load_corpus
from fsdlab.services.model_loader import open_backends
from fsdlab.services.reports import write_length_selection, write_tuning_rows
from fsdlab.services.sweep import expand_policies
from fsdlab.services.tuning import (
    bump_candidate_length,
    match_sd_threshold,
    select_candidate_length,
    tune_threshold_on_dev,
)

logger = logging.getLogger(__name__)


def _int_list(text: str) -> List[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from e
    if not values or any(v < 1 for v in values):
        raise ConfigError(f"expected positive integers, got {text!r}")
    return values


def register(subparsers, parents) -> None:
    length = subparsers.add_parser("tune-L", parents=parents, help="Pick the candidate length and matching threshold on dev prompts")
    length.add_argument("--config", required=True, type=Path)
    length.add_argument("--out", type=Path, default=None)
    length.set_defaults(handler=handle_tune_length)

    threshold = subparsers.add_parser("tune-T", parents=parents, help="Dev-set size vs. test-speed prediction error")
    threshold.add_argument("--config", required=True, type=Path)
    threshold.add_argument("--dev-sizes", default=None, help="Comma-separated dev sizes (default from config)")
    threshold.add_argument("--trials", type=int, default=None)
    threshold.add_argument("--out", type=Path, default=None)
    threshold.set_defaults(handler=handle_tune_threshold)


def _dev_prompts(corpus: Corpus, size: int, seed: int) -> Corpus:
    train = corpus.split("train")
    if len(train) == 0:
        raise InsufficientCorpus("corpus has no train split to tune on")
    return train.sample(min(size, len(train)), seed)


def _tuned_policy(config: ExperimentConfig):
    candidates = [
        p for p in expand_policies(config.policies, config.thresholds)
        if not isinstance(p, (TargetOnlyPolicy, DraftOnlyPolicy))
    ]
    if not candidates:
        raise ConfigError("tuning needs at least one drafting policy")
    return candidates[0]


@handles_errors
def handle_tune_length(args) -> int:
    config = load_experiment_config(args.config)
    seed = args.seed if args.seed is not None else settings.SEED
    cost_ratio = args.cost_ratio if args.cost_ratio is not None else (config.cost_ratio or settings.COST_RATIO)
    dev = list(_dev_prompts(load_corpus(config.corpus), config.tuning.dev_prompts, seed))
    policy = _tuned_policy(config)
    outdir = args.out or config.output_dir

    with open_backends(config.models) as (target, draft):
        selection = select_candidate_length(
            target, draft, dev, config.tuning.length_grid, policy,
            drafting=config.drafting, max_new_tokens=config.max_new_tokens, seed=seed, cost_ratio=cost_ratio,
        )
        match = match_sd_threshold(
            target, draft, dev, config.tuning.kind, selection.selected, config.thresholds,
            drafting=config.drafting, max_new_tokens=config.max_new_tokens, seed=seed,
        )
    bumped = bump_candidate_length(selection.selected, config.tuning.length_grid, match.fsd_acceptance_pct)

    write_length_selection(selection, Path(outdir) / "tune_L.csv")
    logger.info(
        f"{policy.label}: L={selection.selected}, T_SD={match.threshold} "
        f"(SD {match.sd_acceptance_pct:.1f}% vs FSD {match.fsd_acceptance_pct:.1f}%), FSD length {bumped}"
    )
    print(f"L={selection.selected} T_SD={match.threshold} FSD_L={bumped}")
    return EXIT_OK


@handles_errors
def handle_tune_threshold(args) -> int:
    config = load_experiment_config(args.config)
    seed = args.seed if args.seed is not None else settings.SEED
    cost_ratio = args.cost_ratio if args.cost_ratio is not None else (config.cost_ratio or settings.COST_RATIO)
    dev_sizes = _int_list(args.dev_sizes) if args.dev_sizes else config.tuning.dev_sizes
    trials = args.trials or config.tuning.trials
    corpus = load_corpus(config.corpus)
    train, test = corpus.split("train"), corpus.split("test")
    outdir = args.out or config.output_dir

    thresholds = sorted({p.threshold for p in expand_policies(config.policies, config.thresholds) if isinstance(p, FSDPolicy)})
    if not thresholds:
        thresholds = list(config.thresholds)

    rows = []
    with open_backends(config.models) as (target, draft):
        for t in thresholds:
            rows.extend(
                tune_threshold_on_dev(
                    target, draft, train, t, dev_sizes, trials, test,
                    kind=config.tuning.kind, drafting=config.drafting,
                    max_new_tokens=config.max_new_tokens, seed=seed, cost_ratio=cost_ratio,
                )
            )
    write_tuning_rows(rows, Path(outdir) / "tune_T.csv")
    for row in rows:
        print(f"T={row.threshold} n={row.dev_size} error={row.mean_abs_pct_error:.2f}%")
    return EXIT_OK
