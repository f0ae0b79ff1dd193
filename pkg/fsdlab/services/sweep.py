"""
Sweeps over (policy, T, L, seed) points. Each point decodes every prompt of
the configured split; rows are independent and run in a process pool when
more than one worker is configured, results arriving in grid order.
"""

import logging
from multiprocessing import Pool
from typing import Iterator, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict

from fsdlab.config import settings
from fsdlab.models.records import PromptBlocks, RunMetrics, SweepResult, SweepRow
from fsdlab.models.schemas import (
    AcceptancePolicy,
    CorpusRecord,
    DraftingConfig,
    ExperimentConfig,
    ThresholdPolicy,
    policy_kind,
    policy_threshold,
)
from fsdlab.services.corpus import Corpus, load_corpus, prompt_sequence_id
from fsdlab.services.decoding import SpeculativeDecoder
from fsdlab.services.metrics import aggregate_metrics, compute_metrics, proxy_speed
from fsdlab.services.model_loader import open_backends
from fsdlab.services.prob_core import RngState
from fsdlab.services.table_model import ModelBackend

logger = logging.getLogger(__name__)


class SweepPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    policy: AcceptancePolicy
    candidate_length: int
    seed: int


def expand_policies(policies: Sequence, thresholds: Sequence[float]) -> List:
    """Threshold policies without a threshold become one policy per grid value."""
    expanded = []
    for policy in policies:
        if isinstance(policy, ThresholdPolicy) and policy.threshold is None:
            expanded.extend(policy.model_copy(update={"threshold": t}) for t in thresholds)
        else:
            expanded.append(policy)
    return expanded


def expand_points(config: ExperimentConfig) -> List[SweepPoint]:
    return [
        SweepPoint(policy=policy, candidate_length=length, seed=seed)
        for policy in expand_policies(config.policies, config.thresholds)
        for length in config.candidate_lengths
        for seed in config.seeds
    ]


def decode_prompts(
    target: ModelBackend,
    draft: ModelBackend,
    policy,
    drafting: DraftingConfig,
    prompts: Sequence[CorpusRecord],
    max_new_tokens: int,
    seed: int,
) -> List[Tuple[str, RunMetrics, PromptBlocks]]:
    """Decode each prompt on its own RNG stream; results in prompt order."""
    decoder = SpeculativeDecoder(target, draft, policy, drafting)
    results = []
    for record in prompts:
        rng = RngState.for_sequence(seed, prompt_sequence_id(record.id))
        trace = decoder.decode(record.tokens, max_new_tokens, rng).trace
        blocks = PromptBlocks(
            prompt_id=record.id,
            blocks=[[len(b.candidates), b.accepted_count, b.terminator.value] for b in trace.blocks],
        )
        results.append((record.id, compute_metrics(trace), blocks))
    return results


def run_point(
    target: ModelBackend,
    draft: ModelBackend,
    config: ExperimentConfig,
    point: SweepPoint,
    prompts: Sequence[CorpusRecord],
    cost_ratio: float,
) -> SweepRow:
    policy = point.policy
    row = SweepRow(
        policy=policy.label,
        variant=policy.variant,
        kind=policy_kind(policy),
        threshold=policy_threshold(policy),
        candidate_length=point.candidate_length,
        seed=point.seed,
        prompts=len(prompts),
    )
    drafting = config.drafting.model_copy(update={"candidate_length": point.candidate_length})
    try:
        results = decode_prompts(target, draft, policy, drafting, prompts, config.max_new_tokens, point.seed)
    except Exception as e:
        logger.error(f"Sweep row {policy.label} T={row.threshold} L={row.candidate_length} seed={row.seed} failed: {e}")
        return row.model_copy(update={"error": f"{type(e).__name__}: {e}"})

    metrics = aggregate_metrics(m for _, m, _ in results)
    return row.model_copy(
        update={
            "metrics": metrics,
            "proxy_speed": proxy_speed(metrics, cost_ratio),
            "block_summaries": [b for _, _, b in results],
        }
    )


def _run_point_job(job: Tuple[ExperimentConfig, SweepPoint, List[CorpusRecord], float]) -> SweepRow:
    config, point, prompts, cost_ratio = job
    try:
        with open_backends(config.models) as (target, draft):
            return run_point(target, draft, config, point, prompts, cost_ratio)
    except Exception as e:
        logger.error(f"Could not open backends for sweep row: {e}")
        return SweepRow(
            policy=point.policy.label,
            variant=point.policy.variant,
            kind=policy_kind(point.policy),
            threshold=policy_threshold(point.policy),
            candidate_length=point.candidate_length,
            seed=point.seed,
            prompts=len(prompts),
            error=f"{type(e).__name__}: {e}",
        )


def iter_sweep(
    config: ExperimentConfig,
    corpus: Optional[Corpus] = None,
    workers: Optional[int] = None,
    cost_ratio: Optional[float] = None,
) -> Iterator[SweepRow]:
    """Yield rows in grid order (policy, T, L, seed) as they finish."""
    corpus = corpus if corpus is not None else load_corpus(config.corpus)
    prompts = list(corpus.split(config.split))
    cost_ratio = cost_ratio if cost_ratio is not None else (config.cost_ratio or settings.COST_RATIO)
    workers = workers or config.workers or settings.WORKERS
    points = expand_points(config)
    logger.info(f"Sweep: {len(points)} points x {len(prompts)} prompts ({config.split} split), {workers} worker(s)")

    jobs = [(config, point, prompts, cost_ratio) for point in points]
    if workers <= 1:
        for job in jobs:
            yield _log_row(_run_point_job(job))
        return
    with Pool(processes=workers) as pool:
        for row in pool.imap(_run_point_job, jobs):
            yield _log_row(row)


def _log_row(row: SweepRow) -> SweepRow:
    if row.ok:
        logger.info(
            f"Row {row.policy} T={row.threshold} L={row.candidate_length} seed={row.seed}: "
            f"accept={row.metrics.acceptance_pct:.1f}% speed={row.proxy_speed:.3f}"
        )
    return row


def run_sweep(
    config: ExperimentConfig,
    corpus: Optional[Corpus] = None,
    workers: Optional[int] = None,
    cost_ratio: Optional[float] = None,
) -> SweepResult:
    cost_ratio = cost_ratio if cost_ratio is not None else (config.cost_ratio or settings.COST_RATIO)
    rows = list(iter_sweep(config, corpus, workers, cost_ratio))
    result = SweepResult(rows=rows, cost_ratio=cost_ratio)
    logger.info(f"Sweep finished: {len(rows)} rows, {len(result.errors)} failed")
    return result
