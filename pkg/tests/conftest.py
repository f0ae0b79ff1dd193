# tests/conftest.py
import pytest

from fsdlab.models.schemas import SyntheticPairSpec
from fsdlab.services.corpus import make_synthetic_corpus, write_corpus
from fsdlab.services.prob_core import ProbDist
from fsdlab.services.synthetic import generate_pair
from fsdlab.services.table_model import TableModel


@pytest.fixture
def order0_pair():
    """Context-free target [0.2, 0.8] and draft [0.6, 0.4]."""
    target = TableModel(2, 0, {(): ProbDist([0.2, 0.8])}, name="t0")
    draft = TableModel(2, 0, {(): ProbDist([0.6, 0.4])}, name="d0")
    return target, draft


@pytest.fixture
def make_pair():
    def _make(seed=7, vocab_size=4, order=1, alignment=0.5):
        return generate_pair(
            SyntheticPairSpec(seed=seed, vocab_size=vocab_size, order=order, alignment=alignment)
        )

    return _make


@pytest.fixture
def aligned_pair(make_pair):
    return make_pair(alignment=1.0)


@pytest.fixture
def misaligned_pair(make_pair):
    return make_pair(alignment=0.2)


@pytest.fixture
def corpus_file(tmp_path):
    corpus = make_synthetic_corpus(vocab_size=4, n_prompts=20, test_fraction=0.5, seed=3)
    return write_corpus(corpus, tmp_path / "corpus.jsonl")
