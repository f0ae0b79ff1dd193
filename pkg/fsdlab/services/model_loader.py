# fsdlab/services/model_loader.py
import logging
from contextlib import contextmanager
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Tuple

from fsdlab.errors import VocabMismatch
from fsdlab.models.schemas import SyntheticPairSpec
from fsdlab.services.remote_model import RemoteModel
from fsdlab.services.synthetic import generate_pair
from fsdlab.services.table_model import ModelBackend, TableModel, load_table_model

logger = logging.getLogger(__name__)


@lru_cache(maxsize=32)
def synthetic_pair(spec: SyntheticPairSpec) -> Tuple[TableModel, TableModel]:
    """Cached per process; table models are immutable so sharing is safe."""
    return generate_pair(spec)


@lru_cache(maxsize=32)
def table_pair(target_path: Path, draft_path: Path) -> Tuple[TableModel, TableModel]:
    target = load_table_model(target_path)
    draft = load_table_model(draft_path)
    if target.vocab_size != draft.vocab_size:
        raise VocabMismatch(f"{target_path} has vocab {target.vocab_size}, {draft_path} has {draft.vocab_size}")
    return target, draft


@contextmanager
def open_backends(source) -> Iterator[Tuple[ModelBackend, ModelBackend]]:
    """
    Yield (target, draft) for a ModelSource. Remote sessions are opened here
    and closed on exit; table backends are cached and left open.
    """
    if source.type == "synthetic":
        yield synthetic_pair(source.spec)
        return
    if source.type == "tables":
        yield table_pair(Path(source.target), Path(source.draft))
        return

    if source.target.vocab_size != source.draft.vocab_size:
        raise VocabMismatch("remote target and draft declare different vocab sizes")
    target = RemoteModel(source.target, name="target")
    try:
        draft = RemoteModel(source.draft, name="draft")
    except BaseException:
        target.close()
        raise
    try:
        yield target, draft
    finally:
        draft.close()
        target.close()
        logger.info("Closed remote backends")
