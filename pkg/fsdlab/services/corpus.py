# fsdlab/services/corpus.py
import hashlib
import json
import logging
from pathlib import Path
from typing import Iterator, List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from fsdlab.errors import CorpusParseError, InsufficientCorpus
from fsdlab.models.schemas import CorpusRecord
from fsdlab.services.prob_core import RngState, sample
from fsdlab.services.table_model import ModelBackend, check_tokens

logger = logging.getLogger(__name__)

SplitName = Literal["train", "test", "all"]


class Corpus(BaseModel):
    """Prompt records with unique ids; split labels come from the file."""
    model_config = ConfigDict(frozen=True)

    records: List[CorpusRecord] = []

    @model_validator(mode="after")
    def _unique_ids(self):
        seen = set()
        for r in self.records:
            if r.id in seen:
                raise ValueError(f"duplicate prompt id {r.id!r}")
            seen.add(r.id)
        return self

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[CorpusRecord]:
        return iter(self.records)

    def split(self, name: SplitName) -> "Corpus":
        if name == "all":
            return self
        return Corpus(records=[r for r in self.records if r.split == name])

    def check_vocab(self, vocab_size: int) -> None:
        for r in self.records:
            check_tokens(r.tokens, vocab_size)

    def sample(self, n: int, seed: int | Sequence[int]) -> "Corpus":
        """n records without replacement, in corpus order."""
        if n > len(self.records):
            raise InsufficientCorpus(f"need {n} prompts, corpus has {len(self.records)}")
        gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
        picked = sorted(gen.choice(len(self.records), size=n, replace=False).tolist())
        return Corpus(records=[self.records[i] for i in picked])


def prompt_sequence_id(prompt_id: str) -> int:
    """Stable 64-bit id of a prompt, used as the RNG spawn key of its decode."""
    digest = hashlib.blake2b(prompt_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def load_corpus(path: Path | str) -> Corpus:
    """Read a JSONL corpus. Blank lines are skipped; errors carry the 1-based line number."""
    path = Path(path)
    records: List[CorpusRecord] = []
    seen = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = CorpusRecord.model_validate(json.loads(line))
            except json.JSONDecodeError as e:
                raise CorpusParseError(f"invalid JSON: {e.msg}", line=lineno) from e
            except ValidationError as e:
                raise CorpusParseError(f"invalid record: {e.errors()[0]['msg']}", line=lineno) from e
            if record.id in seen:
                raise CorpusParseError(f"duplicate prompt id {record.id!r}", line=lineno)
            seen.add(record.id)
            records.append(record)
    logger.info(f"Loaded {len(records)} prompts from {path}")
    return Corpus(records=records)


def write_corpus(corpus: Corpus, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for r in corpus:
            f.write(r.model_dump_json() + "\n")
    return path


def make_synthetic_corpus(
    vocab_size: int,
    n_prompts: int,
    min_length: int = 2,
    max_length: int = 8,
    test_fraction: float = 0.2,
    seed: int = 0,
    model: Optional[ModelBackend] = None,
) -> Corpus:
    """
    Seeded prompts. With a model, tokens after a uniform first token are
    sampled from it so prompts look like its own text; otherwise uniform.
    """
    if not 1 <= min_length <= max_length:
        raise ValueError("need 1 <= min_length <= max_length")
    if not 0.0 <= test_fraction <= 1.0:
        raise ValueError("test_fraction must lie in [0, 1]")
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    n_test = int(round(n_prompts * test_fraction))
    test_ids = set(gen.permutation(n_prompts)[:n_test].tolist())
    width = max(4, len(str(n_prompts)))

    records = []
    for i in range(n_prompts):
        length = int(gen.integers(min_length, max_length + 1))
        tokens = [int(gen.integers(vocab_size))]
        if model is not None:
            rng = RngState(seed, (i,))
            while len(tokens) < length:
                tokens.append(sample(model.next_dist(tokens), rng))
        else:
            tokens.extend(int(t) for t in gen.integers(vocab_size, size=length - 1))
        records.append(CorpusRecord(id=f"p{i:0{width}d}", tokens=tokens, split="test" if i in test_ids else "train"))
    logger.info(f"Generated {n_prompts} synthetic prompts ({n_test} test)")
    return Corpus(records=records)
