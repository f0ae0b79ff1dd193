import json
import logging
from pathlib import Path

import yaml
from dotenv import load_dotenv
from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from fsdlab.errors import ConfigError
from fsdlab.models.schemas import ExperimentConfig

logger = logging.getLogger(__name__)

load_dotenv()


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="FSDLAB_", extra="ignore")

    SEED: int = 0
    WORKERS: int = 1
    # Cost of one draft forward pass relative to one target forward pass (~8x size gap)
    COST_RATIO: float = 0.125
    LOG_LEVEL: str = "INFO"

    ENUMERATION_CAP: int = 1_000_000
    REMOTE_TIMEOUT_MS: int = 5000
    # default max_length of the dynamic candidate-length schedule
    MAX_CANDIDATE_LENGTH: int = 32

    DEFAULT_OUTPUT_DIR: str = "results"


settings = Settings()


def load_experiment_config(path: Path | str) -> ExperimentConfig:
    """
    Parse an ExperimentConfig from JSON or YAML (chosen by suffix). Relative
    paths inside the file resolve against the file's directory.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            payload = yaml.safe_load(text)
        else:
            payload = json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot parse config {path}: {e}") from e
    if not isinstance(payload, dict):
        raise ConfigError(f"config {path} must be a mapping")
    try:
        config = ExperimentConfig.model_validate(payload)
    except ValidationError as e:
        raise ConfigError(f"invalid config {path}:\n{e}") from e

    base = path.parent
    updates = {}
    if not config.corpus.is_absolute():
        updates["corpus"] = base / config.corpus
    if not config.output_dir.is_absolute():
        updates["output_dir"] = base / config.output_dir
    if config.models.type == "tables":
        updates["models"] = config.models.model_copy(
            update={
                "target": config.models.target if config.models.target.is_absolute() else base / config.models.target,
                "draft": config.models.draft if config.models.draft.is_absolute() else base / config.models.draft,
            }
        )
    logger.info(f"Loaded experiment config {path}")
    return config.model_copy(update=updates) if updates else config
