# test_corpus.py
import json

import pytest

from fsdlab.errors import CorpusParseError, InsufficientCorpus, TokenOutOfRange
from fsdlab.services.corpus import load_corpus, make_synthetic_corpus, prompt_sequence_id, write_corpus


def _write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class TestLoadCorpus:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("", encoding="utf-8")
        assert len(load_corpus(path)) == 0

    def test_preserves_splits_and_skips_blank_lines(self, tmp_path):
        path = _write_lines(
            tmp_path / "c.jsonl",
            [
                json.dumps({"id": "a", "tokens": [0, 1], "split": "train"}),
                "",
                json.dumps({"id": "b", "tokens": [2]}),
            ],
        )
        corpus = load_corpus(path)
        assert [r.id for r in corpus] == ["a", "b"]
        assert [r.split for r in corpus] == ["train", "test"]
        assert [r.id for r in corpus.split("train")] == ["a"]
        assert len(corpus.split("all")) == 2

    def test_duplicate_id_reports_line(self, tmp_path):
        path = _write_lines(
            tmp_path / "dup.jsonl",
            [json.dumps({"id": "a", "tokens": [0]}), json.dumps({"id": "a", "tokens": [1]})],
        )
        with pytest.raises(CorpusParseError) as exc_info:
            load_corpus(path)
        assert exc_info.value.line == 2
        assert "line 2" in str(exc_info.value)

    @pytest.mark.parametrize(
        "bad_line",
        ["{not json", json.dumps({"id": "x", "tokens": []}), json.dumps({"id": "x", "tokens": [-1]})],
    )
    def test_invalid_records(self, tmp_path, bad_line):
        path = _write_lines(tmp_path / "bad.jsonl", [json.dumps({"id": "ok", "tokens": [0]}), bad_line])
        with pytest.raises(CorpusParseError) as exc_info:
            load_corpus(path)
        assert exc_info.value.line == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_corpus(tmp_path / "missing.jsonl")

    def test_vocab_check_is_deferred(self, tmp_path):
        path = _write_lines(tmp_path / "big.jsonl", [json.dumps({"id": "a", "tokens": [0, 9]})])
        corpus = load_corpus(path)
        with pytest.raises(TokenOutOfRange):
            corpus.check_vocab(4)


class TestSynthesis:
    def test_deterministic_and_written(self, tmp_path):
        a = make_synthetic_corpus(vocab_size=5, n_prompts=30, seed=11)
        b = make_synthetic_corpus(vocab_size=5, n_prompts=30, seed=11)
        assert a == b
        path = write_corpus(a, tmp_path / "out" / "corpus.jsonl")
        assert load_corpus(path) == a

    def test_shape(self):
        corpus = make_synthetic_corpus(vocab_size=3, n_prompts=40, min_length=2, max_length=5, test_fraction=0.25, seed=1)
        assert len(corpus.split("test")) == 10
        assert len(corpus.split("train")) == 30
        for record in corpus:
            assert 2 <= len(record.tokens) <= 5
            assert all(0 <= t < 3 for t in record.tokens)
        assert corpus.records[0].id == "p0000"

    def test_from_model(self, make_pair):
        target, _ = make_pair(vocab_size=4)
        corpus = make_synthetic_corpus(vocab_size=4, n_prompts=10, seed=2, model=target)
        corpus.check_vocab(4)

    def test_bad_lengths(self):
        with pytest.raises(ValueError):
            make_synthetic_corpus(vocab_size=3, n_prompts=5, min_length=4, max_length=2)


class TestSampling:
    def test_sample_without_replacement(self, corpus_file):
        train = load_corpus(corpus_file).split("train")
        picked = train.sample(5, seed=(0, 5, 1))
        ids = [r.id for r in picked]
        assert len(set(ids)) == 5
        assert ids == sorted(ids)
        assert picked == train.sample(5, seed=(0, 5, 1))

    def test_insufficient(self, corpus_file):
        train = load_corpus(corpus_file).split("train")
        with pytest.raises(InsufficientCorpus):
            train.sample(len(train) + 1, seed=0)


class TestSequenceIds:
    def test_stable_and_distinct(self):
        assert prompt_sequence_id("p0001") == prompt_sequence_id("p0001")
        assert prompt_sequence_id("p0001") != prompt_sequence_id("p0002")
        assert 0 <= prompt_sequence_id("anything") < 2**64
