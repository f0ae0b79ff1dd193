"""Autoregressive backend interface and exact Markov-order table models."""

import json
import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from fsdlab.errors import TokenOutOfRange, VocabMismatch
from fsdlab.models.schemas import TableEntry, TableModelFile
from fsdlab.services.prob_core import ProbDist, RngState, TokenId

logger = logging.getLogger(__name__)

Context = Tuple[TokenId, ...]


class ModelBackend(ABC):
    """
    Next-token distribution provider.

    next_dists(ctx, start)[j] must equal next_dist(ctx[:start + j + 1]) for every
    position start + j in [start, len(ctx)).
    """

    name: str = "backend"
    vocab_size: int
    max_context_length: Optional[int] = None

    @abstractmethod
    def next_dist(self, context: Sequence[TokenId]) -> ProbDist:
        ...

    def next_dists(self, context: Sequence[TokenId], start: int) -> List[ProbDist]:
        if start < 0:
            raise ValueError(f"start must be non-negative, got {start}")
        return [self.next_dist(context[: i + 1]) for i in range(start, len(context))]

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()


def check_tokens(context: Sequence[TokenId], vocab_size: int) -> None:
    for t in context:
        if t < 0 or t >= vocab_size:
            raise TokenOutOfRange(f"token {t} outside vocabulary of size {vocab_size}")


class TableModel(ModelBackend):
    """
    Markov model of a fixed order backed by an explicit table.

    Lookup uses the longest suffix of the context (length <= order) present in
    the table and falls back to `default_dist`. Instances are immutable.
    """

    def __init__(
        self,
        vocab_size: int,
        order: int,
        table: Dict[Context, ProbDist],
        default_dist: Optional[ProbDist] = None,
        name: str = "table",
    ):
        if order < 0:
            raise ValueError(f"order must be non-negative, got {order}")
        default_dist = default_dist or ProbDist.uniform(vocab_size)
        if default_dist.vocab_size != vocab_size:
            raise VocabMismatch("default distribution has the wrong vocab size")
        for ctx, dist in table.items():
            if len(ctx) > order:
                raise ValueError(f"context {ctx} longer than order {order}")
            check_tokens(ctx, vocab_size)
            if dist.vocab_size != vocab_size:
                raise VocabMismatch(f"entry {ctx} has vocab size {dist.vocab_size}, expected {vocab_size}")
        self.vocab_size = vocab_size
        self.order = order
        self._table = dict(table)
        self.default_dist = default_dist
        self.name = name

    @property
    def table(self) -> Dict[Context, ProbDist]:
        return dict(self._table)

    def contexts(self) -> List[Context]:
        return list(self._table)

    def next_dist(self, context: Sequence[TokenId]) -> ProbDist:
        check_tokens(context, self.vocab_size)
        n = len(context)
        for k in range(min(self.order, n), -1, -1):
            dist = self._table.get(tuple(context[n - k:]))
            if dist is not None:
                return dist
        return self.default_dist

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TableModel):
            return NotImplemented
        return (
            self.vocab_size == other.vocab_size
            and self.order == other.order
            and self.default_dist == other.default_dist
            and self._table.keys() == other._table.keys()
            and all(self._table[k] == other._table[k] for k in self._table)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"TableModel(name={self.name!r}, vocab_size={self.vocab_size}, order={self.order}, entries={len(self._table)})"


class UniformModel(ModelBackend):
    """Context-free uniform backend; the echo logit server's default."""

    def __init__(self, vocab_size: int, name: str = "echo"):
        self.vocab_size = vocab_size
        self.name = name
        self._dist = ProbDist.uniform(vocab_size)

    def next_dist(self, context: Sequence[TokenId]) -> ProbDist:
        check_tokens(context, self.vocab_size)
        return self._dist


def check_batched_consistency(
    backend: ModelBackend,
    context: Sequence[TokenId],
    rng: RngState,
    samples: int = 3,
    atol: float = 1e-9,
) -> bool:
    """Compare next_dists against next_dist at a few sampled prefix positions."""
    if not context:
        return True
    batched = backend.next_dists(context, 0)
    positions = sorted({int(rng.uniform() * len(context)) for _ in range(samples)})
    for pos in positions:
        single = backend.next_dist(context[: pos + 1])
        if abs(single.probs - batched[pos].probs).max() > atol:
            logger.warning(f"Batched/unbatched mismatch for {backend.name} at position {pos}")
            return False
    return True


def load_table_model(path: Path | str) -> TableModel:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        payload = TableModelFile.model_validate(json.load(f))
    table = {tuple(e.context): ProbDist(e.probs) for e in payload.entries}
    model = TableModel(
        vocab_size=payload.vocab_size,
        order=payload.order,
        table=table,
        default_dist=ProbDist(payload.default),
        name=payload.name,
    )
    logger.info(f"Loaded table model {model.name} from {path} ({len(table)} entries)")
    return model


def dump_table_model(model: TableModel, path: Path | str) -> Path:
    path = Path(path)
    payload = TableModelFile(
        vocab_size=model.vocab_size,
        order=model.order,
        default=model.default_dist.to_list(),
        entries=[TableEntry(context=list(ctx), probs=dist.to_list()) for ctx, dist in model.table.items()],
        name=model.name,
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(payload.model_dump_json(indent=2), encoding="utf-8")
    return path
