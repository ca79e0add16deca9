import os
import logging
from typing import Optional, Type, TypeVar

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError

from ggmotion.errors import ConfigurationError
from ggmotion.models import ModelConfig, SynthConfig, TrainConfig
from ggmotion.utils import read_json

logger = logging.getLogger(__name__)

# Load environment variables from .env file
load_dotenv()

DEFAULT_CONFIG_PATH = os.path.join(os.path.dirname(os.path.dirname(__file__)), "ggmotion_config.yaml")

BUILTIN_DEFAULTS = {
    "model": {"channels": 16, "hidden": 32, "blocks": 4, "t_h": 10, "t_f": 10},
    "train": {"epochs": 50, "batch_size": 64, "lr": 3e-4, "lr_decay": 0.88, "input_scale": 1e-3},
    "synth": {"frames": 120, "fps": 25.0},
    "logging": {"level": "INFO"},
    "threads": 1,
}

ConfigT = TypeVar("ConfigT", bound=BaseModel)


def load_defaults(path: Optional[str] = None) -> dict:
    """
    Load repository defaults from YAML

    Args:
        path: YAML file to read (default: ggmotion_config.yaml next to the package)

    Returns:
        dict: Parsed defaults, or the built-in defaults when the file is missing or invalid
    """
    config_path = path or DEFAULT_CONFIG_PATH
    try:
        with open(config_path, "r") as file:
            loaded = yaml.safe_load(file) or {}
        if not isinstance(loaded, dict):
            raise ValueError("top level must be a mapping")
        return loaded
    except Exception as e:
        logger.warning("Error loading defaults from %s: %s; using built-in defaults", config_path, e)
        return {key: (value.copy() if isinstance(value, dict) else value) for key, value in BUILTIN_DEFAULTS.items()}


def _env_int(name: str) -> Optional[int]:
    raw = os.getenv(name, "").strip()
    if not raw:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigurationError(f"{name} must be an integer, got {raw!r}")


class Settings:
    """Merged view of in-code defaults, YAML defaults, environment and explicit config files"""

    def __init__(self, config_path: Optional[str] = None):
        self.defaults = load_defaults(config_path)
        self.seed_override = _env_int("GGMOTION_SEED")
        self.log_level = os.getenv("GGMOTION_LOG_LEVEL") or self.defaults.get("logging", {}).get("level", "INFO")
        self.threads = _env_int("GGMOTION_THREADS") or int(self.defaults.get("threads", 1))

    def _build(self, section: str, model: Type[ConfigT], path: Optional[str], overrides: Optional[dict]) -> ConfigT:
        data = dict(self.defaults.get(section) or {})
        if path:
            loaded = read_json(path)
            if not isinstance(loaded, dict):
                raise ConfigurationError(f"{section} config in {path} must be a JSON object")
            data.update(loaded)
        if overrides:
            data.update(overrides)
        # GGMOTION_SEED wins over every file so CI sweeps can vary seeds alone
        if self.seed_override is not None:
            data["seed"] = self.seed_override
        try:
            return model.model_validate(data)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid {section} config: {e}")

    def model_config_from(self, path: Optional[str] = None, **overrides) -> ModelConfig:
        return self._build("model", ModelConfig, path, overrides)

    def train_config_from(self, path: Optional[str] = None, **overrides) -> TrainConfig:
        return self._build("train", TrainConfig, path, overrides)

    def synth_config_from(self, path: Optional[str] = None, **overrides) -> SynthConfig:
        return self._build("synth", SynthConfig, path, overrides)

    def get_settings(self) -> dict:
        return {
            "config_path": DEFAULT_CONFIG_PATH,
            "seed_override": self.seed_override,
            "log_level": self.log_level,
            "threads": self.threads,
        }
