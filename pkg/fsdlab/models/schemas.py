from enum import Enum
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class DivergenceKind(str, Enum):
    KL = "kl"
    JS = "js"
    TV = "tv"


class SamplingMode(BaseModel):
    """How a token is drawn from a distribution: argmax, or a tempered sample."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    strategy: Literal["greedy", "sampled"] = "sampled"
    temperature: float = Field(1.0, gt=0)

    @property
    def greedy(self) -> bool:
        return self.strategy == "greedy"


class FixedSchedule(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    type: Literal["fixed"] = "fixed"


def _max_candidate_length() -> int:
    # fsdlab.config imports this module
    from fsdlab.config import settings

    return settings.MAX_CANDIDATE_LENGTH


class DynamicSchedule(BaseModel):
    """Grow the block after full acceptance, shrink it after a rejection."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    type: Literal["dynamic"] = "dynamic"
    increase_on_full_accept: int = Field(2, ge=0)
    decrease_on_reject: int = Field(1, ge=0)
    min_length: int = Field(1, ge=1)
    max_length: int = Field(default_factory=_max_candidate_length, ge=1)

    @model_validator(mode="after")
    def _check_bounds(self):
        if self.min_length > self.max_length:
            raise ValueError("min_length must not exceed max_length")
        return self


LengthSchedule = Annotated[Union[FixedSchedule, DynamicSchedule], Field(discriminator="type")]


class DraftingConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    candidate_length: int = Field(5, ge=1)
    length_schedule: LengthSchedule = Field(default_factory=FixedSchedule)
    draft_mode: SamplingMode = Field(default_factory=lambda: SamplingMode(strategy="greedy"))
    rejection_sampling: SamplingMode = Field(default_factory=SamplingMode)
    bonus_token: bool = True
    stop_token: Optional[int] = Field(None, ge=0)


# Acceptance policies

class SDPolicy(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    variant: Literal["sd"] = "sd"

    @property
    def label(self) -> str:
        return "SD"


class FSDPolicy(BaseModel):
    """Accept iff Div(P_T, P_D) < threshold; fall back to the target on rejection."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    variant: Literal["fsd"] = "fsd"
    kind: DivergenceKind = DivergenceKind.JS
    threshold: Optional[float] = Field(None, ge=0)

    @property
    def label(self) -> str:
        return "FSD"


class RFSDPolicy(BaseModel):
    """Accept if below threshold or the SD test passes; resample from the residual."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    variant: Literal["rfsd"] = "rfsd"
    kind: DivergenceKind = DivergenceKind.JS
    threshold: Optional[float] = Field(None, ge=0)

    @property
    def label(self) -> str:
        return "rFSD"


class RandomPolicy(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    variant: Literal["random"] = "random"
    rate: float = Field(..., ge=0, le=1)

    @property
    def label(self) -> str:
        return "Random"


class TargetOnlyPolicy(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    variant: Literal["target_only"] = "target_only"

    @property
    def label(self) -> str:
        return "TargetOnly"


class DraftOnlyPolicy(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    variant: Literal["draft_only"] = "draft_only"

    @property
    def label(self) -> str:
        return "DraftOnly"


AcceptancePolicy = Annotated[
    Union[SDPolicy, FSDPolicy, RFSDPolicy, RandomPolicy, TargetOnlyPolicy, DraftOnlyPolicy],
    Field(discriminator="variant"),
]

ThresholdPolicy = (FSDPolicy, RFSDPolicy)


def policy_threshold(policy) -> Optional[float]:
    return policy.threshold if isinstance(policy, ThresholdPolicy) else None


def policy_kind(policy) -> Optional[DivergenceKind]:
    return policy.kind if isinstance(policy, ThresholdPolicy) else None


# Model sources

class SyntheticPairSpec(BaseModel):
    """Seeded target/draft table pair with a knob for draft-target alignment."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = Field(0, ge=0)
    vocab_size: int = Field(8, ge=2, le=64)
    order: int = Field(1, ge=0, le=3)
    alignment: float = Field(0.5, ge=0, le=1, description="alpha: 1 makes draft == target")
    noise_temperature: float = Field(1.0, gt=0)
    concentration: float = Field(0.5, gt=0, description="Symmetric Dirichlet concentration")


class RemoteModelConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    transport: Literal["stdio", "tcp"] = "stdio"
    command: List[str] = Field(default_factory=list, description="Server argv for stdio transport")
    host: str = "127.0.0.1"
    port: Optional[int] = Field(None, ge=1, le=65535)
    timeout_ms: Optional[int] = Field(None, gt=0)
    vocab_size: int = Field(..., ge=1)
    max_context_length: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def _check_transport(self):
        if self.transport == "stdio" and not self.command:
            raise ValueError("stdio transport needs a server command")
        if self.transport == "tcp" and self.port is None:
            raise ValueError("tcp transport needs a port")
        return self


class SyntheticSource(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    type: Literal["synthetic"] = "synthetic"
    spec: SyntheticPairSpec = Field(default_factory=SyntheticPairSpec)


class TableFilesSource(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    type: Literal["tables"] = "tables"
    target: Path
    draft: Path


class RemoteSource(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    type: Literal["remote"] = "remote"
    target: RemoteModelConfig
    draft: RemoteModelConfig


ModelSource = Annotated[
    Union[SyntheticSource, TableFilesSource, RemoteSource], Field(discriminator="type")
]


# Experiment configuration

class TuningConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    length_grid: List[int] = Field(default_factory=lambda: [5, 10, 15, 20], min_length=1)
    kind: DivergenceKind = DivergenceKind.JS
    dev_sizes: List[int] = Field(default_factory=lambda: [4, 8, 16, 32], min_length=1)
    trials: int = Field(10, ge=1)
    dev_prompts: int = Field(16, ge=1, description="Dev subset size for tune-L")

    @field_validator("length_grid", "dev_sizes")
    @classmethod
    def _positive(cls, v: List[int]) -> List[int]:
        if any(x < 1 for x in v):
            raise ValueError("grid entries must be positive")
        return v


DEFAULT_THRESHOLDS = [round(0.1 * i, 1) for i in range(1, 11)]


class ExperimentConfig(BaseModel):
    """
    One sweep: every (policy, T, L, seed) point is decoded over the corpus split.

    fsd/rfsd policies without a threshold expand over `thresholds`; every other
    policy contributes a single point per (L, seed).
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    models: ModelSource = Field(default_factory=SyntheticSource)
    policies: List[AcceptancePolicy] = Field(..., min_length=1)
    thresholds: List[float] = Field(default_factory=lambda: list(DEFAULT_THRESHOLDS), min_length=1)
    candidate_lengths: List[int] = Field(default_factory=lambda: [5], min_length=1)
    drafting: DraftingConfig = Field(default_factory=DraftingConfig)
    max_new_tokens: int = Field(32, ge=0)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2], min_length=1)
    corpus: Path
    split: Literal["train", "test", "all"] = "test"
    output_dir: Path = Path("results")
    cost_ratio: Optional[float] = Field(None, gt=0)
    workers: Optional[int] = Field(None, ge=1)
    tuning: TuningConfig = Field(default_factory=TuningConfig)

    @field_validator("seeds")
    @classmethod
    def _distinct_seeds(cls, v: List[int]) -> List[int]:
        if len(set(v)) != len(v):
            raise ValueError("seeds must be distinct")
        if any(s < 0 for s in v):
            raise ValueError("seeds must be non-negative")
        return v

    @field_validator("thresholds")
    @classmethod
    def _non_negative_thresholds(cls, v: List[float]) -> List[float]:
        if any(t < 0 for t in v):
            raise ValueError("thresholds must be non-negative")
        return v

    @field_validator("candidate_lengths")
    @classmethod
    def _positive_lengths(cls, v: List[int]) -> List[int]:
        if any(x < 1 for x in v):
            raise ValueError("candidate lengths must be positive")
        return v


# Corpus

class CorpusRecord(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    id: str = Field(..., min_length=1)
    tokens: List[int] = Field(..., min_length=1)
    split: Literal["train", "test"] = "test"

    @field_validator("tokens")
    @classmethod
    def _non_negative(cls, v: List[int]) -> List[int]:
        if any(t < 0 for t in v):
            raise ValueError("token ids must be non-negative")
        return v


# Table model files

class TableEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    context: List[int] = Field(default_factory=list)
    probs: List[float]


class TableModelFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    vocab_size: int = Field(..., ge=1)
    order: int = Field(..., ge=0)
    default: List[float]
    entries: List[TableEntry] = Field(default_factory=list)
    name: str = "table"


# Logit-server wire frames (one JSON object per line)

class HelloRequest(BaseModel):
    type: Literal["hello"] = "hello"
    protocol: int = 1


class HelloResponse(BaseModel):
    type: Literal["hello"] = "hello"
    vocab_size: int = Field(..., ge=1)
    name: str = ""


class DistsRequest(BaseModel):
    type: Literal["dists"] = "dists"
    id: int
    tokens: List[int]
    start: int = Field(..., ge=0)


class DistsResponse(BaseModel):
    type: Literal["dists"] = "dists"
    id: int
    probs: List[List[float]]


class ErrorResponse(BaseModel):
    type: Literal["error"] = "error"
    id: Optional[int] = None
    message: str
