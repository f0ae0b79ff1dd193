"""
Draft-verify decode loop for SD, FSD, rFSD, random acceptance and the
single-model baselines.

Uniform-draw protocol (fixed so that runs with equal seeds line up across
policies): one draw per sampled draft token, one draw per candidate inspected
by SD, rFSD and Random (none for plain FSD), and one draw per sampled
resample, bonus or baseline token. Greedy modes never draw.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from fsdlab.errors import AllZero, DegenerateResidual, VocabMismatch, ZeroDraftProbability
from fsdlab.models.records import (
    BlockRecord,
    BlockTerminator,
    CandidateRecord,
    DecodeResult,
    DecodeTrace,
    ResampleSource,
    TokenSource,
)
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
    ThresholdPolicy,
    policy_kind,
    policy_threshold,
)
from fsdlab.services.divergence import divergence
from fsdlab.services.prob_core import (
    ProbDist,
    RngState,
    TokenId,
    apply_temperature,
    argmax,
    normalize,
    sample,
)
from fsdlab.services.table_model import ModelBackend, check_tokens

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AcceptanceDecision:
    accepted: bool
    resample_from: Optional[ResampleSource] = None
    divergence: Optional[float] = None
    accept_prob: Optional[float] = None


def sd_accept_prob(pT_x: float, pD_x: float) -> float:
    """min(1, P_T(x) / P_D(x))."""
    if pD_x <= 0:
        raise ZeroDraftProbability("candidate has zero probability under the draft")
    return min(1.0, pT_x / pD_x)


def residual_dist(pT: ProbDist, pD: ProbDist) -> ProbDist:
    """normalize(max(0, pT - pD)), the SD resampling law."""
    if pT.vocab_size != pD.vocab_size:
        raise VocabMismatch(f"vocab sizes differ: {pT.vocab_size} vs {pD.vocab_size}")
    if pT == pD:
        raise DegenerateResidual("target and draft distributions are identical")
    try:
        return normalize(np.maximum(pT.probs - pD.probs, 0.0))
    except AllZero as e:
        raise DegenerateResidual("residual has no positive mass") from e


def resample_source(policy) -> Optional[ResampleSource]:
    if isinstance(policy, (SDPolicy, RFSDPolicy)):
        return ResampleSource.RESIDUAL
    if isinstance(policy, (FSDPolicy, RandomPolicy, TargetOnlyPolicy)):
        return ResampleSource.TARGET
    return None


def _require_threshold(policy) -> float:
    if policy.threshold is None:
        raise ValueError(f"{policy.label} policy needs a threshold")
    return policy.threshold


def acceptance_probability(policy, pT: ProbDist, pD: ProbDist, candidate: TokenId) -> float:
    """Probability that decide_acceptance accepts `candidate` (marginal over its draw)."""
    if isinstance(policy, SDPolicy):
        return sd_accept_prob(pT[candidate], pD[candidate])
    if isinstance(policy, FSDPolicy):
        return 1.0 if divergence(policy.kind, pT, pD) < _require_threshold(policy) else 0.0
    if isinstance(policy, RFSDPolicy):
        if divergence(policy.kind, pT, pD) < _require_threshold(policy):
            return 1.0
        return sd_accept_prob(pT[candidate], pD[candidate])
    if isinstance(policy, RandomPolicy):
        return policy.rate
    if isinstance(policy, DraftOnlyPolicy):
        return 1.0
    return 0.0


def resample_distribution(policy, pT: ProbDist, pD: ProbDist) -> ProbDist:
    if resample_source(policy) == ResampleSource.RESIDUAL:
        return residual_dist(pT, pD)
    return pT


def decide_acceptance(policy, pT: ProbDist, pD: ProbDist, candidate: TokenId, rng: RngState) -> AcceptanceDecision:
    """Accept or reject one candidate; `pD` is the draft's proposal distribution."""
    if candidate < 0 or candidate >= pT.vocab_size:
        raise ValueError(f"candidate {candidate} outside vocabulary of size {pT.vocab_size}")
    source = resample_source(policy)

    if isinstance(policy, FSDPolicy):
        div = divergence(policy.kind, pT, pD)
        accepted = div < _require_threshold(policy)
        return AcceptanceDecision(accepted, None if accepted else source, divergence=div)

    if isinstance(policy, SDPolicy):
        a = sd_accept_prob(pT[candidate], pD[candidate])
        accepted = a > rng.uniform()
        return AcceptanceDecision(accepted, None if accepted else source, accept_prob=a)

    if isinstance(policy, RFSDPolicy):
        div = divergence(policy.kind, pT, pD)
        a = sd_accept_prob(pT[candidate], pD[candidate])
        y = rng.uniform()
        accepted = div < _require_threshold(policy) or a > y
        return AcceptanceDecision(accepted, None if accepted else source, divergence=div, accept_prob=a)

    if isinstance(policy, RandomPolicy):
        accepted = rng.uniform() < policy.rate
        return AcceptanceDecision(accepted, None if accepted else source, accept_prob=policy.rate)

    if isinstance(policy, DraftOnlyPolicy):
        return AcceptanceDecision(True)
    return AcceptanceDecision(False, source)


def step_law(policy, pT: ProbDist, pD: ProbDist) -> ProbDist:
    """
    Law of the token emitted at one candidate position when the candidate is
    drawn from pD: accepted draft mass plus rejection mass times the resample
    distribution. For SD this is pT.
    """
    draft = pD.probs
    accept = np.zeros_like(draft)
    for x in np.flatnonzero(draft):
        accept[x] = acceptance_probability(policy, pT, pD, int(x))
    accepted_mass = draft * accept
    reject_mass = 1.0 - float(accepted_mass.sum())
    law = accepted_mass.copy()
    if reject_mass > 1e-12:
        law += reject_mass * resample_distribution(policy, pT, pD).probs
    return ProbDist(law)


def proposal(dist: ProbDist, mode: SamplingMode) -> ProbDist:
    """The distribution a drafted token is effectively drawn from."""
    if mode.greedy:
        return dist
    return apply_temperature(dist, mode.temperature)


def draw_token(dist: ProbDist, mode: SamplingMode, rng: RngState) -> TokenId:
    if mode.greedy:
        return argmax(dist)
    return sample(apply_temperature(dist, mode.temperature), rng)


class SpeculativeDecoder:
    """
    One target/draft pair under one policy and drafting configuration.

    A decode session is strictly sequential; distinct sessions with their own
    RngState may run concurrently over immutable backends.
    """

    def __init__(self, target: ModelBackend, draft: ModelBackend, policy, cfg: DraftingConfig):
        if target.vocab_size != draft.vocab_size:
            raise VocabMismatch(f"target vocab {target.vocab_size} != draft vocab {draft.vocab_size}")
        if isinstance(policy, ThresholdPolicy):
            _require_threshold(policy)
        self.target = target
        self.draft = draft
        self.policy = policy
        self.cfg = cfg
        self.trace_kind = policy_kind(policy) or DivergenceKind.JS
        limits = [m.max_context_length for m in (target, draft) if m.max_context_length]
        self.context_limit = min(limits) if limits else None

    def decode(self, prompt: Sequence[TokenId], max_new_tokens: int, rng: RngState) -> DecodeResult:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        if max_new_tokens < 0:
            raise ValueError("max_new_tokens must be non-negative")
        check_tokens(prompt, self.target.vocab_size)

        trace = DecodeTrace(
            policy=self.policy.label,
            divergence_kind=policy_kind(self.policy),
            threshold=policy_threshold(self.policy),
            prompt_length=len(prompt),
        )
        context: List[TokenId] = list(prompt)
        generated: List[TokenId] = []
        length = self._initial_length()

        while len(generated) < max_new_tokens and not trace.stopped:
            remaining = max_new_tokens - len(generated)
            block_len = min(length, remaining)
            if self.context_limit is not None:
                block_len = min(block_len, self.context_limit - len(context))
                if block_len <= 0:
                    logger.info(f"Context limit {self.context_limit} reached after {len(generated)} tokens")
                    break

            index = len(trace.blocks)
            try:
                if isinstance(self.policy, TargetOnlyPolicy):
                    block = self._target_step(context, index, rng)
                elif isinstance(self.policy, DraftOnlyPolicy):
                    block = self._draft_only_block(context, block_len, index, rng)
                else:
                    block = self._speculative_block(context, block_len, remaining, index, rng)
            except Exception as e:
                e.add_note(f"while decoding block {index} at context length {len(context)}")
                logger.error(f"Decode failed in block {index} (context length {len(context)}): {e}")
                raise

            trace.blocks.append(block)
            trace.draft_calls += block.draft_calls
            trace.target_calls += block.target_calls
            context.extend(block.emitted)
            generated.extend(block.emitted)
            if self.cfg.stop_token is not None and block.emitted and block.emitted[-1] == self.cfg.stop_token:
                trace.stopped = True
            length = self._next_length(length, block, block_len)
            logger.debug(
                f"Block {index}: proposed={len(block.candidates)} accepted={block.accepted_count} "
                f"terminator={block.terminator.value}"
            )

        return DecodeResult(tokens=generated, trace=trace)

    def _initial_length(self) -> int:
        schedule = self.cfg.length_schedule
        length = self.cfg.candidate_length
        if isinstance(schedule, DynamicSchedule):
            length = min(max(length, schedule.min_length), schedule.max_length)
        return length

    def _next_length(self, length: int, block: BlockRecord, block_len: int) -> int:
        schedule = self.cfg.length_schedule
        if not isinstance(schedule, DynamicSchedule) or not block.candidates:
            return length
        if block.first_rejection is not None:
            return max(schedule.min_length, length - schedule.decrease_on_reject)
        if block.accepted_count == block_len:
            return min(schedule.max_length, length + schedule.increase_on_full_accept)
        return length

    def _is_stop(self, token: TokenId) -> bool:
        return self.cfg.stop_token is not None and token == self.cfg.stop_token

    def _target_step(self, context: List[TokenId], index: int, rng: RngState) -> BlockRecord:
        dist = self.target.next_dist(context)
        token = draw_token(dist, self.cfg.rejection_sampling, rng)
        return BlockRecord(
            index=index,
            context_length=len(context),
            terminator=BlockTerminator.RESAMPLE,
            terminator_token=token,
            resample_from=ResampleSource.TARGET,
            emitted=[token],
            sources=[TokenSource.TARGET],
            target_calls=1,
        )

    def _draft_only_block(self, context: List[TokenId], block_len: int, index: int, rng: RngState) -> BlockRecord:
        ctx = list(context)
        records: List[CandidateRecord] = []
        for _ in range(block_len):
            pD = self.draft.next_dist(ctx)
            q = proposal(pD, self.cfg.draft_mode)
            token = draw_token(pD, self.cfg.draft_mode, rng)
            records.append(
                CandidateRecord(token=token, position=len(ctx), target_prob=None, draft_prob=q[token], accepted=True)
            )
            ctx.append(token)
            if self._is_stop(token):
                break
        emitted = [r.token for r in records]
        stopped = bool(emitted) and self._is_stop(emitted[-1])
        return BlockRecord(
            index=index,
            context_length=len(context),
            candidates=records,
            terminator=BlockTerminator.END if stopped else BlockTerminator.NONE,
            emitted=emitted,
            sources=[TokenSource.DRAFT] * len(emitted),
            draft_calls=len(records),
        )

    def _speculative_block(
        self, context: List[TokenId], block_len: int, remaining: int, index: int, rng: RngState
    ) -> BlockRecord:
        # (a) draft proposes the block
        ctx = list(context)
        candidates: List[TokenId] = []
        proposals: List[ProbDist] = []
        for _ in range(block_len):
            pD = self.draft.next_dist(ctx)
            q = proposal(pD, self.cfg.draft_mode)
            token = argmax(pD) if self.cfg.draft_mode.greedy else sample(q, rng)
            candidates.append(token)
            proposals.append(q)
            ctx.append(token)
            if self._is_stop(token):
                break

        # (b) one batched target pass over every candidate position plus the bonus slot
        target_dists = self.target.next_dists(ctx, len(context) - 1)
        if len(target_dists) != len(candidates) + 1:
            raise ValueError(
                f"target returned {len(target_dists)} distributions, expected {len(candidates) + 1}"
            )

        # (c) sequential decisions, truncated at the first rejection
        records: List[CandidateRecord] = []
        first_rejection: Optional[int] = None
        rejection: Optional[AcceptanceDecision] = None
        for i, token in enumerate(candidates):
            pT, q = target_dists[i], proposals[i]
            decision = None
            if first_rejection is None:
                decision = decide_acceptance(self.policy, pT, q, token, rng)
                if not decision.accepted:
                    first_rejection = i
                    rejection = decision
            div = decision.divergence if decision and decision.divergence is not None else divergence(self.trace_kind, pT, q)
            records.append(
                CandidateRecord(
                    token=token,
                    position=len(context) + i,
                    target_prob=pT[token],
                    draft_prob=q[token],
                    divergence=div,
                    sd_accept_prob=sd_accept_prob(pT[token], q[token]),
                    accepted=decision is not None and decision.accepted,
                )
            )

        # (d) terminator
        n_accepted = len(candidates) if first_rejection is None else first_rejection
        emitted = candidates[:n_accepted]
        sources = [TokenSource.DRAFT] * n_accepted
        terminator_token = None
        resample_from = None
        if rejection is not None:
            pT, q = target_dists[first_rejection], proposals[first_rejection]
            resample_from = rejection.resample_from
            dist = residual_dist(pT, q) if resample_from == ResampleSource.RESIDUAL else pT
            terminator_token = draw_token(dist, self.cfg.rejection_sampling, rng)
            emitted.append(terminator_token)
            sources.append(TokenSource.TARGET_RESAMPLE)
            terminator = BlockTerminator.RESAMPLE
        elif emitted and self._is_stop(emitted[-1]):
            terminator = BlockTerminator.END
        elif not self.cfg.bonus_token:
            terminator = BlockTerminator.NONE
        elif len(emitted) < remaining:
            terminator_token = draw_token(target_dists[len(candidates)], self.cfg.rejection_sampling, rng)
            emitted.append(terminator_token)
            sources.append(TokenSource.TARGET_BONUS)
            terminator = BlockTerminator.BONUS
        else:
            terminator = BlockTerminator.END

        return BlockRecord(
            index=index,
            context_length=len(context),
            candidates=records,
            first_rejection=first_rejection,
            terminator=terminator,
            terminator_token=terminator_token,
            resample_from=resample_from,
            emitted=emitted,
            sources=sources,
            draft_calls=len(candidates),
            target_calls=1,
        )


def decode(
    target: ModelBackend,
    draft: ModelBackend,
    prompt: Sequence[TokenId],
    policy,
    cfg: DraftingConfig,
    max_new_tokens: int,
    rng: RngState,
) -> DecodeResult:
    return SpeculativeDecoder(target, draft, policy, cfg).decode(prompt, max_new_tokens, rng)


def replay_decisions(
    target: ModelBackend,
    draft: ModelBackend,
    prompt: Sequence[TokenId],
    tokens: Sequence[TokenId],
    policy,
) -> List[bool]:
    """
    Threshold decisions along a fixed continuation: flag i is the FSD test at
    the prefix prompt + tokens[:i], whatever the draft actually proposed there.
    """
    if not isinstance(policy, ThresholdPolicy):
        raise ValueError(f"{policy.label} has no deterministic threshold decision to replay")
    threshold = _require_threshold(policy)
    flags = []
    context = list(prompt)
    for token in tokens:
        pT = target.next_dist(context)
        pD = draft.next_dist(context)
        flags.append(divergence(policy.kind, pT, pD) < threshold)
        context.append(token)
    return flags


def replay_block_stats(flags: Sequence[bool], candidate_length: int) -> tuple[int, int]:
    """(accepted, blocks) when a fixed flag sequence is cut into blocks without bonus tokens."""
    accepted = blocks = run = 0
    for flag in flags:
        if flag:
            accepted += 1
            run += 1
            if run == candidate_length:
                blocks += 1
                run = 0
        else:
            blocks += 1
            run = 0
    if run:
        blocks += 1
    return accepted, blocks
