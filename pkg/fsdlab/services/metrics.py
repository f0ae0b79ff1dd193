# fsdlab/services/metrics.py
import logging
from typing import Iterable

from fsdlab.models.records import DecodeTrace, RunMetrics, TokenSource

logger = logging.getLogger(__name__)


def compute_metrics(trace: DecodeTrace) -> RunMetrics:
    """Count blocks, candidates, acceptances and model calls of one decode."""
    blocks = len(trace.blocks)
    proposed = sum(len(b.candidates) for b in trace.blocks)
    accepted = sum(b.accepted_count for b in trace.blocks)
    tokens = sum(len(b.emitted) for b in trace.blocks)
    draft_tokens = sum(1 for b in trace.blocks for s in b.sources if s == TokenSource.DRAFT)
    return RunMetrics.from_counts(
        tokens_generated=tokens,
        blocks=blocks,
        proposed_candidates=proposed,
        accepted_candidates=accepted,
        draft_tokens=draft_tokens,
        draft_calls=trace.draft_calls,
        target_calls=trace.target_calls,
    )


def aggregate_metrics(items: Iterable[RunMetrics]) -> RunMetrics:
    """
    Pool several runs by summing raw counts, then re-derive the ratios.

    Ratios are therefore token/block weighted, not a mean of per-run ratios.
    """
    totals = dict(
        tokens_generated=0,
        blocks=0,
        proposed_candidates=0,
        accepted_candidates=0,
        draft_tokens=0,
        draft_calls=0,
        target_calls=0,
    )
    for m in items:
        for key in totals:
            totals[key] += getattr(m, key)
    return RunMetrics.from_counts(**totals)


def proxy_speed(metrics: RunMetrics, cost_ratio: float) -> float:
    """
    Tokens per unit of model cost, one target pass costing 1 and one draft
    pass costing `cost_ratio`. Zero when nothing was called.
    """
    if cost_ratio < 0:
        raise ValueError(f"cost_ratio must be non-negative, got {cost_ratio}")
    denominator = metrics.target_calls + metrics.draft_calls * cost_ratio
    if denominator <= 0:
        return 0.0
    return metrics.tokens_generated / denominator
