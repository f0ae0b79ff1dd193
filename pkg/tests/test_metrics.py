# test_metrics.py
import pytest

from fsdlab.models.records import (
    BlockRecord,
    BlockTerminator,
    CandidateRecord,
    DecodeTrace,
    ResampleSource,
    RunMetrics,
    TokenSource,
)
from fsdlab.services.metrics import aggregate_metrics, compute_metrics, proxy_speed


def _block(index, accepted, proposed, bonus=False):
    candidates = [
        CandidateRecord(token=1, position=index * 10 + i, target_prob=0.5, draft_prob=0.5, accepted=i < accepted)
        for i in range(proposed)
    ]
    rejected = accepted < proposed
    emitted = [1] * accepted + ([0] if rejected or bonus else [])
    sources = [TokenSource.DRAFT] * accepted
    if rejected:
        sources.append(TokenSource.TARGET_RESAMPLE)
    elif bonus:
        sources.append(TokenSource.TARGET_BONUS)
    return BlockRecord(
        index=index,
        context_length=1,
        candidates=candidates,
        first_rejection=accepted if rejected else None,
        terminator=BlockTerminator.RESAMPLE if rejected else (BlockTerminator.BONUS if bonus else BlockTerminator.NONE),
        resample_from=ResampleSource.TARGET if rejected else None,
        emitted=emitted,
        sources=sources,
        draft_calls=proposed,
        target_calls=1,
    )


def _trace(*blocks):
    return DecodeTrace(
        policy="FSD",
        prompt_length=1,
        blocks=list(blocks),
        draft_calls=sum(b.draft_calls for b in blocks),
        target_calls=sum(b.target_calls for b in blocks),
    )


class TestComputeMetrics:
    def test_single_block_with_rejection(self):
        metrics = compute_metrics(_trace(_block(0, accepted=3, proposed=5)))
        assert metrics.acceptance_length == 3.0
        assert metrics.tokens_generated == 4
        assert metrics.acceptance_pct == pytest.approx(60.0)
        assert metrics.pct_from_draft == pytest.approx(0.75)
        assert metrics.target_calls_per_token == pytest.approx(0.25)

    def test_full_acceptance_with_bonus(self):
        blocks = [_block(i, accepted=4, proposed=4, bonus=True) for i in range(3)]
        metrics = compute_metrics(_trace(*blocks))
        assert metrics.pct_from_draft == pytest.approx(12 / 15)
        assert metrics.acceptance_length == 4.0
        assert metrics.mean_candidate_length == 4.0

    def test_empty_generation(self):
        metrics = compute_metrics(_trace())
        assert metrics == RunMetrics()


class TestAggregate:
    def test_sums_counts_before_ratios(self):
        a = compute_metrics(_trace(_block(0, accepted=5, proposed=5, bonus=True)))
        b = compute_metrics(_trace(_block(0, accepted=0, proposed=5), _block(1, accepted=0, proposed=5)))
        pooled = aggregate_metrics([a, b])
        assert pooled.blocks == 3
        assert pooled.accepted_candidates == 5
        assert pooled.acceptance_length == pytest.approx(5 / 3)
        assert pooled.acceptance_pct == pytest.approx(100 * 5 / 15)

    def test_empty(self):
        assert aggregate_metrics([]) == RunMetrics()


class TestProxySpeed:
    def test_value(self):
        metrics = RunMetrics.from_counts(12, 2, 10, 10, 10, 10, 2)
        assert proxy_speed(metrics, 0.1) == pytest.approx(12 / 3)

    def test_zero_cost_ratio(self):
        metrics = RunMetrics.from_counts(12, 2, 10, 10, 10, 10, 2)
        assert proxy_speed(metrics, 0.0) == pytest.approx(6.0)

    def test_no_calls(self):
        assert proxy_speed(RunMetrics(), 0.5) == 0.0

    def test_negative_cost_ratio(self):
        with pytest.raises(ValueError):
            proxy_speed(RunMetrics(), -1.0)
