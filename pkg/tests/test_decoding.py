# test_decoding.py
import numpy as np
import pytest

from fsdlab.errors import DegenerateResidual, TokenOutOfRange, VocabMismatch, ZeroDraftProbability
from fsdlab.models.records import BlockTerminator, ResampleSource, TokenSource
from fsdlab.models.schemas import (
    DivergenceKind,
    DraftingConfig,
    DraftOnlyPolicy,
    DynamicSchedule,
    FSDPolicy,
    RandomPolicy,
    RFSDPolicy,
    SamplingMode,
    SDPolicy,
    TargetOnlyPolicy,
)
from fsdlab.services.decoding import (
    SpeculativeDecoder,
    decide_acceptance,
    decode,
    replay_block_stats,
    replay_decisions,
    residual_dist,
    sd_accept_prob,
    step_law,
)
from fsdlab.services.metrics import compute_metrics
from fsdlab.services.prob_core import ProbDist, RngState
from fsdlab.services.table_model import TableModel

SAMPLED = SamplingMode(strategy="sampled")
GREEDY = SamplingMode(strategy="greedy")


def fsd(threshold, kind=DivergenceKind.JS):
    return FSDPolicy(kind=kind, threshold=threshold)


def rfsd(threshold, kind=DivergenceKind.JS):
    return RFSDPolicy(kind=kind, threshold=threshold)


class TestSdAcceptProb:
    @pytest.mark.parametrize("pT,pD,expected", [(0.2, 0.5, 0.4), (0.5, 0.2, 1.0), (0.3, 0.3, 1.0)])
    def test_values(self, pT, pD, expected):
        assert sd_accept_prob(pT, pD) == pytest.approx(expected)

    def test_zero_draft_probability(self):
        with pytest.raises(ZeroDraftProbability):
            sd_accept_prob(0.5, 0.0)


class TestResidual:
    @pytest.mark.parametrize(
        "pT,pD,expected",
        [
            ([0.5, 0.3, 0.2], [0.7, 0.2, 0.1], [0.0, 0.5, 0.5]),
            ([1.0, 0.0], [0.0, 1.0], [1.0, 0.0]),
            ([0.6, 0.4], [0.4, 0.6], [1.0, 0.0]),
        ],
    )
    def test_values(self, pT, pD, expected):
        np.testing.assert_allclose(residual_dist(ProbDist(pT), ProbDist(pD)).probs, expected, atol=1e-12)

    def test_identical_is_degenerate(self):
        with pytest.raises(DegenerateResidual):
            residual_dist(ProbDist([0.3, 0.7]), ProbDist([0.3, 0.7]))

    def test_vocab_mismatch(self):
        with pytest.raises(VocabMismatch):
            residual_dist(ProbDist([0.3, 0.7]), ProbDist([0.2, 0.3, 0.5]))


class TestDecideAcceptance:
    pT = ProbDist([0.5, 0.5])
    pD = ProbDist([0.9, 0.1])

    def test_fsd_accepts_below_threshold_without_drawing(self):
        rng = RngState(0)
        decision = decide_acceptance(fsd(0.2), self.pT, self.pD, 0, rng)
        assert decision.accepted
        assert decision.divergence == pytest.approx(0.101749, abs=1e-6)
        assert rng.draws == 0

    def test_fsd_rejects_above_threshold_to_target(self):
        decision = decide_acceptance(fsd(0.05), self.pT, self.pD, 1, RngState(0))
        assert not decision.accepted
        assert decision.resample_from == ResampleSource.TARGET

    def test_fsd_zero_threshold_always_rejects(self):
        for kind in DivergenceKind:
            assert not decide_acceptance(fsd(0.0, kind), self.pT, self.pD, 0, RngState(0)).accepted

    def test_sd_uses_one_draw_and_residual(self):
        rng = RngState(3)
        decision = decide_acceptance(SDPolicy(), self.pT, self.pD, 0, rng)
        assert rng.draws == 1
        assert decision.accept_prob == pytest.approx(5 / 9)
        if not decision.accepted:
            assert decision.resample_from == ResampleSource.RESIDUAL

    def test_sd_always_accepts_when_target_dominates(self):
        for seed in range(50):
            assert decide_acceptance(SDPolicy(), self.pT, self.pD, 1, RngState(seed)).accepted

    def test_rfsd_at_zero_matches_sd(self):
        gen = np.random.default_rng(11)
        for seed in range(300):
            pT = ProbDist(gen.dirichlet(np.ones(3)))
            pD = ProbDist(gen.dirichlet(np.ones(3)))
            x = int(gen.integers(3))
            a = decide_acceptance(SDPolicy(), pT, pD, x, RngState(seed))
            b = decide_acceptance(rfsd(0.0), pT, pD, x, RngState(seed))
            assert a.accepted == b.accepted
            assert a.resample_from == b.resample_from

    def test_rfsd_accepts_below_threshold(self):
        # SD alone accepts token 0 with probability 5/9
        accepted = [decide_acceptance(rfsd(0.2), self.pT, self.pD, 0, RngState(s)).accepted for s in range(50)]
        assert all(accepted)

    def test_random_rate_extremes(self):
        assert not decide_acceptance(RandomPolicy(rate=0.0), self.pT, self.pD, 0, RngState(1)).accepted
        assert decide_acceptance(RandomPolicy(rate=1.0), self.pT, self.pD, 0, RngState(1)).accepted

    def test_random_rate_frequency(self):
        rng = RngState(8)
        n = 20_000
        hits = sum(decide_acceptance(RandomPolicy(rate=0.3), self.pT, self.pD, 0, rng).accepted for _ in range(n))
        assert abs(hits / n - 0.3) < 0.015

    def test_candidate_out_of_range(self):
        with pytest.raises(ValueError):
            decide_acceptance(SDPolicy(), self.pT, self.pD, 2, RngState(0))

    def test_missing_threshold(self):
        with pytest.raises(ValueError):
            decide_acceptance(FSDPolicy(), self.pT, self.pD, 0, RngState(0))


class TestStepLaw:
    def test_sd_step_law_is_target(self):
        gen = np.random.default_rng(2)
        for _ in range(100):
            pT = ProbDist(gen.dirichlet(np.ones(4)))
            pD = ProbDist(gen.dirichlet(np.ones(4)))
            np.testing.assert_allclose(step_law(SDPolicy(), pT, pD).probs, pT.probs, atol=1e-12)

    def test_fsd_step_law(self):
        pT, pD = ProbDist([0.5, 0.5]), ProbDist([0.9, 0.1])
        np.testing.assert_allclose(step_law(fsd(0.2), pT, pD).probs, pD.probs)
        np.testing.assert_allclose(step_law(fsd(0.05), pT, pD).probs, pT.probs)

    def test_random_step_law_mixes(self):
        pT, pD = ProbDist([0.5, 0.5]), ProbDist([0.9, 0.1])
        np.testing.assert_allclose(step_law(RandomPolicy(rate=0.25), pT, pD).probs, [0.6, 0.4])


class TestDecodeBaselines:
    def test_target_only_counts(self, misaligned_pair):
        target, draft = misaligned_pair
        result = decode(target, draft, [0], TargetOnlyPolicy(), DraftingConfig(), 12, RngState(0))
        metrics = compute_metrics(result.trace)
        assert len(result.tokens) == 12
        assert metrics.target_calls == 12
        assert metrics.draft_calls == 0
        assert all(s == TokenSource.TARGET for b in result.trace.blocks for s in b.sources)

    def test_draft_only_never_calls_target(self, misaligned_pair):
        target, draft = misaligned_pair
        result = decode(target, draft, [1], DraftOnlyPolicy(), DraftingConfig(candidate_length=4), 10, RngState(0))
        metrics = compute_metrics(result.trace)
        assert len(result.tokens) == 10
        assert metrics.target_calls == 0
        assert metrics.pct_from_draft == 1.0

    def test_target_only_matches_ancestral_sampling(self, order0_pair):
        target, draft = order0_pair
        rng = RngState(5)
        n = 20_000
        hits = 0
        for _ in range(n):
            hits += decode(target, draft, [0], TargetOnlyPolicy(), DraftingConfig(), 1, rng).tokens[0]
        assert abs(hits / n - 0.8) < 0.01


class TestDecodeFsd:
    def test_full_acceptance_with_bonus(self, aligned_pair):
        target, draft = aligned_pair
        result = decode(target, draft, [0, 1], fsd(10.0), DraftingConfig(candidate_length=5), 36, RngState(0))
        metrics = compute_metrics(result.trace)
        assert len(result.tokens) == 36
        assert metrics.blocks == 6
        assert metrics.acceptance_pct == 100.0
        assert metrics.acceptance_length == 5.0
        assert metrics.pct_from_draft == pytest.approx(5 / 6)
        assert all(b.terminator == BlockTerminator.BONUS for b in result.trace.blocks)

    def test_zero_threshold_uses_target_only(self, misaligned_pair):
        target, draft = misaligned_pair
        result = decode(target, draft, [2], fsd(0.0), DraftingConfig(candidate_length=3), 15, RngState(0))
        metrics = compute_metrics(result.trace)
        assert metrics.accepted_candidates == 0
        assert metrics.acceptance_length == 0.0
        assert metrics.tokens_generated == 15
        assert all(s == TokenSource.TARGET_RESAMPLE for b in result.trace.blocks for s in b.sources)

    def test_greedy_fsd_ignores_seed(self, misaligned_pair):
        target, draft = misaligned_pair
        cfg = DraftingConfig(candidate_length=4, rejection_sampling=GREEDY)
        a = decode(target, draft, [0, 3], fsd(0.3), cfg, 20, RngState(1))
        b = decode(target, draft, [0, 3], fsd(0.3), cfg, 20, RngState(999))
        assert a.tokens == b.tokens

    def test_same_seed_reproduces(self, misaligned_pair):
        target, draft = misaligned_pair
        cfg = DraftingConfig(candidate_length=3, draft_mode=SAMPLED)
        a = decode(target, draft, [1], SDPolicy(), cfg, 25, RngState(4, (2,)))
        b = decode(target, draft, [1], SDPolicy(), cfg, 25, RngState(4, (2,)))
        assert a.tokens == b.tokens
        assert a.trace == b.trace

    def test_no_bonus_token(self, aligned_pair):
        target, draft = aligned_pair
        cfg = DraftingConfig(candidate_length=4, bonus_token=False)
        result = decode(target, draft, [0], fsd(1.0), cfg, 12, RngState(0))
        assert [b.terminator for b in result.trace.blocks] == [BlockTerminator.NONE] * 3
        assert compute_metrics(result.trace).pct_from_draft == 1.0

    def test_final_block_truncated_to_budget(self, aligned_pair):
        target, draft = aligned_pair
        result = decode(target, draft, [0], fsd(1.0), DraftingConfig(candidate_length=5), 7, RngState(0))
        assert len(result.tokens) == 7
        last = result.trace.blocks[-1]
        assert len(last.candidates) == 1
        assert last.terminator == BlockTerminator.END

    def test_zero_budget(self, aligned_pair):
        target, draft = aligned_pair
        result = decode(target, draft, [0], fsd(1.0), DraftingConfig(), 0, RngState(0))
        assert result.tokens == []
        assert compute_metrics(result.trace).blocks == 0

    def test_records_all_candidates(self, misaligned_pair):
        target, draft = misaligned_pair
        result = decode(target, draft, [0], fsd(0.05), DraftingConfig(candidate_length=5), 30, RngState(0))
        for block in result.trace.blocks:
            assert len(block.candidates) >= 1
            if block.first_rejection is not None:
                assert block.accepted_count == block.first_rejection
                assert all(not c.accepted for c in block.candidates[block.first_rejection:])
            for c in block.candidates:
                assert c.target_prob is not None
                assert c.divergence is not None

    def test_stop_token(self, order0_pair):
        target, draft = order0_pair
        cfg = DraftingConfig(candidate_length=3, stop_token=0)
        result = decode(target, draft, [1], DraftOnlyPolicy(), cfg, 10, RngState(0))
        assert result.tokens == [0]
        assert result.trace.stopped
        assert result.trace.blocks[0].terminator == BlockTerminator.END

    def test_dynamic_schedule(self, aligned_pair):
        target, draft = aligned_pair
        cfg = DraftingConfig(
            candidate_length=3,
            length_schedule=DynamicSchedule(increase_on_full_accept=2, decrease_on_reject=1, min_length=1, max_length=9),
        )
        result = decode(target, draft, [0], fsd(1.0), cfg, 100, RngState(0))
        lengths = [len(b.candidates) for b in result.trace.blocks[:5]]
        assert lengths == [3, 5, 7, 9, 9]

    def test_dynamic_schedule_default_clamp(self, aligned_pair, monkeypatch):
        monkeypatch.setattr("fsdlab.config.settings.MAX_CANDIDATE_LENGTH", 5)
        target, draft = aligned_pair
        cfg = DraftingConfig(candidate_length=3, length_schedule=DynamicSchedule(increase_on_full_accept=2))
        result = decode(target, draft, [0], fsd(1.0), cfg, 100, RngState(0))
        assert [len(b.candidates) for b in result.trace.blocks[:4]] == [3, 5, 5, 5]

    def test_context_limit(self, aligned_pair):
        target, draft = aligned_pair
        target.max_context_length = 6
        try:
            result = decode(target, draft, [0, 1], fsd(1.0), DraftingConfig(candidate_length=3), 20, RngState(0))
        finally:
            target.max_context_length = None
        assert len(result.tokens) <= 4

    def test_validation(self, misaligned_pair):
        target, draft = misaligned_pair
        decoder = SpeculativeDecoder(target, draft, SDPolicy(), DraftingConfig())
        with pytest.raises(ValueError):
            decoder.decode([], 5, RngState(0))
        with pytest.raises(TokenOutOfRange):
            decoder.decode([9], 5, RngState(0))
        with pytest.raises(ValueError):
            SpeculativeDecoder(target, draft, FSDPolicy(), DraftingConfig())

    def test_vocab_mismatch(self, misaligned_pair, order0_pair):
        with pytest.raises(VocabMismatch):
            SpeculativeDecoder(misaligned_pair[0], order0_pair[1], SDPolicy(), DraftingConfig())


class TestDecodeSd:
    def test_output_matches_target(self, order0_pair):
        target, draft = order0_pair
        cfg = DraftingConfig(candidate_length=2, draft_mode=SAMPLED)
        rng = RngState(12)
        n = 20_000
        hits = sum(decode(target, draft, [0], SDPolicy(), cfg, 1, rng).tokens[0] for _ in range(n))
        assert abs(hits / n - 0.8) < 0.01

    def test_identical_models_accept_everything(self, aligned_pair):
        target, draft = aligned_pair
        cfg = DraftingConfig(candidate_length=4, draft_mode=SAMPLED)
        result = decode(target, draft, [0], SDPolicy(), cfg, 20, RngState(0))
        assert compute_metrics(result.trace).acceptance_pct == 100.0

    def test_residual_resample_is_recorded(self):
        target = TableModel(2, 0, {(): ProbDist([1.0, 0.0])})
        draft = TableModel(2, 0, {(): ProbDist([0.0, 1.0])})
        result = decode(target, draft, [0], SDPolicy(), DraftingConfig(candidate_length=2), 3, RngState(0))
        assert result.tokens == [0, 0, 0]
        assert all(b.resample_from == ResampleSource.RESIDUAL for b in result.trace.blocks)


class TestReplay:
    def test_block_stats(self):
        assert replay_block_stats([True, True, False, True, True, True], 2) == (5, 4)
        assert replay_block_stats([], 3) == (0, 0)
        assert replay_block_stats([False] * 4, 3) == (0, 4)

    def test_decisions_monotone_in_threshold(self, misaligned_pair):
        target, draft = misaligned_pair
        tokens = decode(target, draft, [0], TargetOnlyPolicy(), DraftingConfig(), 30, RngState(0)).tokens
        previous = None
        for t in [0.0, 0.05, 0.1, 0.2, 0.4, 0.7]:
            flags = replay_decisions(target, draft, [0], tokens, fsd(t))
            if previous is not None:
                assert all(b or not a for a, b in zip(previous, flags))
            previous = flags

    def test_rejects_stochastic_policy(self, misaligned_pair):
        with pytest.raises(ValueError):
            replay_decisions(*misaligned_pair, [0], [1, 2], SDPolicy())
