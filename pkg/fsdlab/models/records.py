from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

from fsdlab.models.schemas import DivergenceKind


class TokenSource(str, Enum):
    DRAFT = "draft"
    TARGET_RESAMPLE = "target-resample"
    TARGET_BONUS = "target-bonus"
    TARGET = "target"  # target-only baseline step


class BlockTerminator(str, Enum):
    RESAMPLE = "resample"
    BONUS = "bonus"
    NONE = "none"  # full acceptance with bonus tokens disabled
    END = "end"  # budget or stop token reached


class ResampleSource(str, Enum):
    TARGET = "target"
    RESIDUAL = "residual"


class CandidateRecord(BaseModel):
    token: int
    position: int  # absolute position in the full sequence
    target_prob: Optional[float] = None  # None when the target is never consulted
    draft_prob: float
    divergence: Optional[float] = None
    sd_accept_prob: Optional[float] = None
    accepted: bool = False


class BlockRecord(BaseModel):
    index: int
    context_length: int
    candidates: List[CandidateRecord] = Field(default_factory=list)
    first_rejection: Optional[int] = None
    terminator: BlockTerminator
    terminator_token: Optional[int] = None
    resample_from: Optional[ResampleSource] = None
    emitted: List[int] = Field(default_factory=list)
    sources: List[TokenSource] = Field(default_factory=list)
    draft_calls: int = 0
    target_calls: int = 0

    @property
    def accepted_count(self) -> int:
        return sum(1 for c in self.candidates if c.accepted)


class DecodeTrace(BaseModel):
    policy: str
    divergence_kind: Optional[DivergenceKind] = None
    threshold: Optional[float] = None
    prompt_length: int
    blocks: List[BlockRecord] = Field(default_factory=list)
    draft_calls: int = 0
    target_calls: int = 0
    stopped: bool = False

    @property
    def tokens(self) -> List[int]:
        return [t for b in self.blocks for t in b.emitted]


class DecodeResult(BaseModel):
    tokens: List[int]
    trace: DecodeTrace


class RunMetrics(BaseModel):
    """Raw counts plus the derived acceptance and call-accounting figures."""
    tokens_generated: int = 0
    blocks: int = 0
    proposed_candidates: int = 0
    accepted_candidates: int = 0
    draft_tokens: int = 0
    draft_calls: int = 0
    target_calls: int = 0
    acceptance_length: float = 0.0
    acceptance_pct: float = 0.0
    pct_from_draft: float = 0.0
    target_calls_per_token: float = 0.0
    mean_candidate_length: float = 0.0

    @classmethod
    def from_counts(
        cls,
        tokens_generated: int,
        blocks: int,
        proposed_candidates: int,
        accepted_candidates: int,
        draft_tokens: int,
        draft_calls: int,
        target_calls: int,
    ) -> "RunMetrics":
        return cls(
            tokens_generated=tokens_generated,
            blocks=blocks,
            proposed_candidates=proposed_candidates,
            accepted_candidates=accepted_candidates,
            draft_tokens=draft_tokens,
            draft_calls=draft_calls,
            target_calls=target_calls,
            acceptance_length=accepted_candidates / blocks if blocks else 0.0,
            acceptance_pct=100.0 * accepted_candidates / proposed_candidates if proposed_candidates else 0.0,
            pct_from_draft=draft_tokens / tokens_generated if tokens_generated else 0.0,
            target_calls_per_token=target_calls / tokens_generated if tokens_generated else 0.0,
            mean_candidate_length=proposed_candidates / blocks if blocks else 0.0,
        )


class PromptBlocks(BaseModel):
    """Compact per-block summary of one prompt: [proposed, accepted, terminator]."""
    prompt_id: str
    blocks: List[List[Any]] = Field(default_factory=list)


class SweepRow(BaseModel):
    policy: str
    variant: str
    kind: Optional[DivergenceKind] = None
    threshold: Optional[float] = None
    candidate_length: int
    seed: int
    prompts: int = 0
    metrics: Optional[RunMetrics] = None
    proxy_speed: Optional[float] = None
    block_summaries: List[PromptBlocks] = Field(default_factory=list)
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


class SweepResult(BaseModel):
    rows: List[SweepRow] = Field(default_factory=list)
    cost_ratio: float

    @property
    def errors(self) -> List[SweepRow]:
        return [r for r in self.rows if not r.ok]


# Oracle reports

class BoundReport(BaseModel):
    kind: DivergenceKind
    threshold: float
    length: int
    candidate_length: int
    exact_divergence: float
    p_use: float
    pct_md: float
    bound: float
    slack: float
    step_terms: List[float] = Field(default_factory=list)
    step_use: List[float] = Field(default_factory=list)
    decomposition_sum: float = 0.0
    decomposition_exact: Optional[bool] = None
    holds: bool


class RandomBaselineReport(BaseModel):
    kind: DivergenceKind
    threshold: float
    length: int
    use_fraction: float
    fsd_divergence: float
    random_divergence: float
    masks: int
    exact_expectation: bool
    fsd_better: bool


class VerifyReport(BaseModel):
    suite: str
    check: str
    instance: Optional[int] = None
    passed: bool
    flagged: bool = False
    details: Dict[str, Any] = Field(default_factory=dict)


# Tuning

class LengthTrial(BaseModel):
    candidate_length: int
    target_calls_per_token: float
    acceptance_pct: float
    proxy_speed: float


class LengthSelection(BaseModel):
    selected: int
    trials: List[LengthTrial] = Field(default_factory=list)


class ThresholdTrial(BaseModel):
    threshold: float
    acceptance_pct: float
    gap: float


class ThresholdMatch(BaseModel):
    threshold: float
    sd_acceptance_pct: float
    fsd_acceptance_pct: float
    trials: List[ThresholdTrial] = Field(default_factory=list)


class TuningRow(BaseModel):
    threshold: float
    dev_size: int
    trials: int
    test_proxy_speed: float
    mean_abs_pct_error: float
    errors: List[float] = Field(default_factory=list)
