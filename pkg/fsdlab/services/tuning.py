"""
Dev-set procedures for picking the candidate length and the FSD threshold,
and for measuring how well a small dev set predicts test-set speed.
"""

import logging
from typing import Dict, List, Optional, Sequence

from fsdlab.config import settings
from fsdlab.errors import InsufficientCorpus
from fsdlab.models.records import (
    LengthSelection,
    LengthTrial,
    RunMetrics,
    ThresholdMatch,
    ThresholdTrial,
    TuningRow,
)
from fsdlab.models.schemas import CorpusRecord, DivergenceKind, DraftingConfig, FSDPolicy, SDPolicy
from fsdlab.services.corpus import Corpus
from fsdlab.services.metrics import aggregate_metrics, proxy_speed
from fsdlab.services.sweep import decode_prompts
from fsdlab.services.table_model import ModelBackend

logger = logging.getLogger(__name__)

TIE_TOL = 1e-12


def _run(
    target: ModelBackend,
    draft: ModelBackend,
    policy,
    drafting: DraftingConfig,
    prompts: Sequence[CorpusRecord],
    max_new_tokens: int,
    seed: int,
) -> RunMetrics:
    return aggregate_metrics(m for _, m, _ in decode_prompts(target, draft, policy, drafting, prompts, max_new_tokens, seed))


def select_candidate_length(
    target: ModelBackend,
    draft: ModelBackend,
    dev: Sequence[CorpusRecord],
    length_grid: Sequence[int],
    policy,
    drafting: Optional[DraftingConfig] = None,
    max_new_tokens: int = 32,
    seed: int = 0,
    cost_ratio: Optional[float] = None,
) -> LengthSelection:
    """The grid length with the fewest target calls per emitted token; ties go to the smaller length."""
    dev = list(dev)
    if not dev:
        raise InsufficientCorpus("candidate-length selection needs at least one dev prompt")
    if not length_grid:
        raise ValueError("length grid is empty")
    drafting = drafting or DraftingConfig()
    cost_ratio = settings.COST_RATIO if cost_ratio is None else cost_ratio

    trials = []
    best: Optional[LengthTrial] = None
    for length in sorted(set(length_grid)):
        metrics = _run(
            target, draft, policy, drafting.model_copy(update={"candidate_length": length}), dev, max_new_tokens, seed
        )
        trial = LengthTrial(
            candidate_length=length,
            target_calls_per_token=metrics.target_calls_per_token,
            acceptance_pct=metrics.acceptance_pct,
            proxy_speed=proxy_speed(metrics, cost_ratio),
        )
        trials.append(trial)
        if best is None or trial.target_calls_per_token < best.target_calls_per_token - TIE_TOL:
            best = trial
        logger.debug(f"L={length}: {trial.target_calls_per_token:.4f} target calls/token")

    logger.info(f"Selected candidate length {best.candidate_length}")
    return LengthSelection(selected=best.candidate_length, trials=trials)


def match_sd_threshold(
    target: ModelBackend,
    draft: ModelBackend,
    dev: Sequence[CorpusRecord],
    kind: DivergenceKind,
    candidate_length: int,
    thresholds: Sequence[float],
    drafting: Optional[DraftingConfig] = None,
    max_new_tokens: int = 32,
    seed: int = 0,
) -> ThresholdMatch:
    """Grid threshold whose FSD acceptance % is closest to SD's; ties go to the smaller threshold."""
    dev = list(dev)
    if not dev:
        raise InsufficientCorpus("threshold matching needs at least one dev prompt")
    if not thresholds:
        raise ValueError("threshold grid is empty")
    drafting = (drafting or DraftingConfig()).model_copy(update={"candidate_length": candidate_length})

    sd_pct = _run(target, draft, SDPolicy(), drafting, dev, max_new_tokens, seed).acceptance_pct
    trials = []
    best: Optional[ThresholdTrial] = None
    for t in sorted(set(thresholds)):
        pct = _run(target, draft, FSDPolicy(kind=kind, threshold=t), drafting, dev, max_new_tokens, seed).acceptance_pct
        trial = ThresholdTrial(threshold=t, acceptance_pct=pct, gap=abs(pct - sd_pct))
        trials.append(trial)
        if best is None or trial.gap < best.gap - TIE_TOL:
            best = trial

    logger.info(f"SD accepts {sd_pct:.1f}%; matched T={best.threshold} at {best.acceptance_pct:.1f}%")
    return ThresholdMatch(
        threshold=best.threshold,
        sd_acceptance_pct=sd_pct,
        fsd_acceptance_pct=best.acceptance_pct,
        trials=trials,
    )


def bump_candidate_length(
    candidate_length: int, length_grid: Sequence[int], acceptance_pct: float, near_full: float = 95.0
) -> int:
    """Next larger grid length when nearly every candidate is accepted, else unchanged."""
    if acceptance_pct < near_full:
        return candidate_length
    larger = sorted(x for x in set(length_grid) if x > candidate_length)
    return larger[0] if larger else candidate_length


class _PromptMetricsCache:
    """Per-prompt metrics are independent of the sample they appear in, so decode each prompt once."""

    def __init__(self, target, draft, policy, drafting, max_new_tokens, seed):
        self._args = (target, draft, policy, drafting)
        self._max_new_tokens = max_new_tokens
        self._seed = seed
        self._cache: Dict[str, RunMetrics] = {}

    def speed(self, prompts: Sequence[CorpusRecord], cost_ratio: float) -> float:
        missing = [p for p in prompts if p.id not in self._cache]
        if missing:
            for prompt_id, m, _ in decode_prompts(*self._args, missing, self._max_new_tokens, self._seed):
                self._cache[prompt_id] = m
        return proxy_speed(aggregate_metrics(self._cache[p.id] for p in prompts), cost_ratio)


def tune_threshold_on_dev(
    target: ModelBackend,
    draft: ModelBackend,
    train: Corpus,
    threshold: float,
    dev_sizes: Sequence[int],
    trials: int,
    test: Corpus,
    kind: DivergenceKind = DivergenceKind.JS,
    drafting: Optional[DraftingConfig] = None,
    max_new_tokens: int = 32,
    seed: int = 0,
    cost_ratio: Optional[float] = None,
) -> List[TuningRow]:
    """
    For every dev size n, draw `trials` seeded dev samples from the train
    split and report the mean absolute % error of their proxy speed against
    the test split's.
    """
    if not dev_sizes:
        raise ValueError("dev_sizes is empty")
    if len(train) < max(dev_sizes):
        raise InsufficientCorpus(f"train split has {len(train)} prompts, largest dev size is {max(dev_sizes)}")
    if len(test) == 0:
        raise InsufficientCorpus("test split is empty")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    drafting = drafting or DraftingConfig()
    cost_ratio = settings.COST_RATIO if cost_ratio is None else cost_ratio

    cache = _PromptMetricsCache(target, draft, FSDPolicy(kind=kind, threshold=threshold), drafting, max_new_tokens, seed)
    test_speed = cache.speed(list(test), cost_ratio)

    rows = []
    for n in dev_sizes:
        errors = []
        for trial in range(trials):
            dev = train.sample(n, seed=(seed, n, trial))
            dev_speed = cache.speed(list(dev), cost_ratio)
            if test_speed > 0:
                errors.append(abs(dev_speed - test_speed) / test_speed * 100.0)
            else:
                errors.append(0.0 if dev_speed == 0 else float("inf"))
        mean_error = sum(errors) / len(errors)
        rows.append(
            TuningRow(
                threshold=threshold,
                dev_size=n,
                trials=trials,
                test_proxy_speed=test_speed,
                mean_abs_pct_error=mean_error,
                errors=errors,
            )
        )
        logger.info(f"T={threshold} n={n}: mean |dev-test| error {mean_error:.2f}%")
    return rows
