# fsdlab/commands/corpus.py
import logging
from pathlib import Path

from fsdlab.commands import EXIT_OK, handles_errors
from fsdlab.config import load_experiment_config, settings
from fsdlab.errors import ConfigError
from fsdlab.models.schemas import DivergenceKind, SyntheticPairSpec
from fsdlab.services.corpus import make_synthetic_corpus, write_corpus
from fsdlab.services.model_loader import open_backends
from fsdlab.services.synthetic import divergence_histogram, generate_pair, pair_divergences
from fsdlab.services.table_model import TableModel

logger = logging.getLogger(__name__)


def register(subparsers, parents) -> None:
    make = subparsers.add_parser("make-corpus", parents=parents, help="Write a seeded synthetic prompt corpus")
    make.add_argument("--out", required=True, type=Path)
    make.add_argument("--vocab-size", type=int, default=8)
    make.add_argument("--prompts", type=int, default=640)
    make.add_argument("--min-length", type=int, default=2)
    make.add_argument("--max-length", type=int, default=8)
    make.add_argument("--test-fraction", type=float, default=0.2)
    make.add_argument("--order", type=int, default=1, help="Order of the target used with --from-target")
    make.add_argument("--from-target", action="store_true", help="Sample prompts from the synthetic target of --seed")
    make.set_defaults(handler=handle_make_corpus)

    profile = subparsers.add_parser("profile", parents=parents, help="Histogram of per-context draft/target divergence")
    profile.add_argument("--config", required=True, type=Path)
    profile.add_argument("--kind", choices=[k.value for k in DivergenceKind], default="js")
    profile.add_argument("--bins", type=int, default=20)
    profile.set_defaults(handler=handle_profile)


@handles_errors
def handle_make_corpus(args) -> int:
    seed = args.seed if args.seed is not None else settings.SEED
    model = None
    if args.from_target:
        model, _ = generate_pair(SyntheticPairSpec(seed=seed, vocab_size=args.vocab_size, order=args.order))
    corpus = make_synthetic_corpus(
        vocab_size=args.vocab_size,
        n_prompts=args.prompts,
        min_length=args.min_length,
        max_length=args.max_length,
        test_fraction=args.test_fraction,
        seed=seed,
        model=model,
    )
    path = write_corpus(corpus, args.out)
    print(f"{len(corpus)} prompts -> {path}")
    return EXIT_OK


@handles_errors
def handle_profile(args) -> int:
    config = load_experiment_config(args.config)
    kind = DivergenceKind(args.kind)
    with open_backends(config.models) as (target, draft):
        if not isinstance(target, TableModel) or not isinstance(draft, TableModel):
            raise ConfigError("profile needs table-backed models")
        values = list(pair_divergences(target, draft, kind).values())
    finite = [v for v in values if v != float("inf")]
    print("bin_start,bin_end,count")
    for start, end, count in divergence_histogram(values, bins=args.bins):
        print(f"{start:.6f},{end:.6f},{count}")
    if finite:
        logger.info(f"{len(values)} contexts, mean {kind.value} {sum(finite) / len(finite):.4f}")
    return EXIT_OK
