# test_config.py
import json

import pytest
import yaml

from fsdlab.config import Settings, load_experiment_config
from fsdlab.errors import ConfigError
from fsdlab.models.schemas import DEFAULT_THRESHOLDS, DynamicSchedule, FSDPolicy, RemoteModelConfig


def _write_yaml(path, payload):
    path.write_text(yaml.safe_dump(payload), encoding="utf-8")
    return path


class TestSettings:
    def test_defaults(self):
        settings = Settings()
        assert settings.ENUMERATION_CAP == 1_000_000
        assert settings.REMOTE_TIMEOUT_MS == 5000

    def test_environment_override(self, monkeypatch):
        monkeypatch.setenv("FSDLAB_SEED", "42")
        monkeypatch.setenv("FSDLAB_COST_RATIO", "0.5")
        settings = Settings()
        assert settings.SEED == 42
        assert settings.COST_RATIO == 0.5

    def test_max_candidate_length_sets_dynamic_schedule_clamp(self, monkeypatch):
        monkeypatch.setattr("fsdlab.config.settings.MAX_CANDIDATE_LENGTH", 6)
        assert DynamicSchedule().max_length == 6
        assert DynamicSchedule(max_length=9).max_length == 9

    def test_max_candidate_length_from_environment(self, monkeypatch):
        monkeypatch.setenv("FSDLAB_MAX_CANDIDATE_LENGTH", "12")
        assert Settings().MAX_CANDIDATE_LENGTH == 12


class TestLoadExperimentConfig:
    def test_yaml_with_relative_paths(self, tmp_path):
        path = _write_yaml(
            tmp_path / "exp.yaml",
            {
                "models": {"type": "synthetic", "spec": {"seed": 3, "vocab_size": 4}},
                "policies": [{"variant": "sd"}, {"variant": "fsd", "kind": "kl"}],
                "corpus": "data/corpus.jsonl",
                "output_dir": "out",
            },
        )
        config = load_experiment_config(path)
        assert config.corpus == tmp_path / "data" / "corpus.jsonl"
        assert config.output_dir == tmp_path / "out"
        assert isinstance(config.policies[1], FSDPolicy)
        assert config.thresholds == DEFAULT_THRESHOLDS
        assert config.models.spec.vocab_size == 4

    def test_json_and_table_paths(self, tmp_path):
        path = tmp_path / "exp.json"
        path.write_text(
            json.dumps(
                {
                    "models": {"type": "tables", "target": "t.json", "draft": "/abs/d.json"},
                    "policies": [{"variant": "target_only"}],
                    "corpus": "/abs/corpus.jsonl",
                }
            ),
            encoding="utf-8",
        )
        config = load_experiment_config(path)
        assert config.models.target == tmp_path / "t.json"
        assert str(config.models.draft) == "/abs/d.json"
        assert str(config.corpus) == "/abs/corpus.jsonl"

    @pytest.mark.parametrize(
        "payload",
        [
            {"policies": [], "corpus": "c.jsonl"},
            {"policies": [{"variant": "sd"}], "corpus": "c.jsonl", "seeds": [1, 1]},
            {"policies": [{"variant": "sd"}], "corpus": "c.jsonl", "candidate_lengths": [0]},
            {"policies": [{"variant": "nope"}], "corpus": "c.jsonl"},
            {"policies": [{"variant": "sd"}], "corpus": "c.jsonl", "unknown": 1},
            {"policies": [{"variant": "random", "rate": 1.5}], "corpus": "c.jsonl"},
        ],
    )
    def test_invalid(self, tmp_path, payload):
        with pytest.raises(ConfigError):
            load_experiment_config(_write_yaml(tmp_path / "bad.yaml", payload))

    def test_unreadable(self, tmp_path):
        with pytest.raises(ConfigError):
            load_experiment_config(tmp_path / "missing.yaml")

    def test_not_a_mapping(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="mapping"):
            load_experiment_config(path)

    def test_malformed(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_experiment_config(path)


class TestRemoteModelConfig:
    def test_stdio_needs_command(self):
        with pytest.raises(ValueError):
            RemoteModelConfig(transport="stdio", vocab_size=4)

    def test_tcp_needs_port(self):
        with pytest.raises(ValueError):
            RemoteModelConfig(transport="tcp", vocab_size=4)
        assert RemoteModelConfig(transport="tcp", port=9000, vocab_size=4).host == "127.0.0.1"
