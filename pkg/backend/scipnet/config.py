# backend/scipnet/config.py
"""
Configuration and environment setup for SCIP-Net.

Two layers:
- environment settings (threads, logging, default output dir), loaded from `.env`
- experiment configuration (INI file with [simulation], [training],
  [evaluation] and [sweep] sections), validated by the pydantic models in
  `schemas.py`
"""

import configparser
import os
import pathlib
from typing import Any, Dict, List, Optional, Type

from dotenv import load_dotenv
from pydantic import BaseModel
from pydantic import ValidationError as PydanticValidationError

from .errors import ValidationError
from .schemas import EvalConfig, ResolvedConfig, SimConfig, SweepConfig, TrainConfig

# -------------------------------------------------
# PATHS
# -------------------------------------------------
BASE_DIR = pathlib.Path(__file__).resolve().parent.parent
ENV_PATH = BASE_DIR / ".env"

ARTIFACT_VERSION = "1.1.0"


# -------------------------------------------------
# LOAD ENVIRONMENT
# -------------------------------------------------
def load_environment() -> None:
    """Load environment variables from the .env file, if present."""
    if ENV_PATH.exists():
        load_dotenv(ENV_PATH)


# Load on import
load_environment()


def _positive_int(name: str, raw: str) -> Optional[int]:
    raw = raw.strip()
    if not raw:
        return None
    try:
        value = int(raw)
    except ValueError:
        raise ValidationError(f"expected a positive integer, got {raw!r}", key=name)
    if value < 1:
        raise ValidationError(f"expected a positive integer, got {raw!r}", key=name)
    return value


# -------------------------------------------------
# ENVIRONMENT SETTINGS
# -------------------------------------------------
class Settings:
    """Process-level settings read from the environment."""

    def __init__(self) -> None:
        # Caps torch intra-op threads; parsed by `threads()` when a command runs
        self.THREADS: str = os.environ.get("SCIPNET_THREADS", "")
        self.LOG_LEVEL: str = os.environ.get("SCIPNET_LOG_LEVEL", "INFO").upper()
        self.NO_COLOR: bool = bool(os.environ.get("SCIPNET_NO_COLOR"))
        self.OUTPUT_DIR: pathlib.Path = pathlib.Path(
            os.environ.get("SCIPNET_OUTPUT_DIR", "runs")
        )
        self.ARTIFACT_VERSION: str = ARTIFACT_VERSION

    def threads(self) -> Optional[int]:
        """
        Thread cap from SCIPNET_THREADS, or None when unset.

        Raises:
            ValidationError: value is not a positive integer
        """
        return _positive_int("SCIPNET_THREADS", self.THREADS)


settings = Settings()


# -------------------------------------------------
# EXPERIMENT CONFIGURATION
# -------------------------------------------------
SECTIONS: Dict[str, Type[BaseModel]] = {
    "simulation": SimConfig,
    "training": TrainConfig,
    "evaluation": EvalConfig,
    "sweep": SweepConfig,
}

# Keys whose values are comma-separated lists
LIST_KEYS = {"horizons", "gammas", "seeds", "variants", "omegas"}


def _parse_value(key: str, raw: str) -> Any:
    raw = raw.strip()
    if key in LIST_KEYS:
        return [item.strip() for item in raw.split(",") if item.strip()]
    return raw


def parse_config_text(text: str) -> ResolvedConfig:
    """
    Parse INI text into a fully defaulted configuration.

    Args:
        text: INI content; may be empty

    Returns:
        ResolvedConfig with every default materialized

    Raises:
        ValidationError: unknown section/key, type mismatch or range violation,
            naming the offending key path (e.g. "training.lr")
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ValidationError(f"malformed config: {e}")

    sections: Dict[str, Any] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ValidationError("unknown section", key=section)
        sections[section] = {
            key: _parse_value(key, value) for key, value in parser.items(section)
        }

    resolved: Dict[str, BaseModel] = {
        section: _validate_section(section, sections.get(section, {}))
        for section in SECTIONS
    }
    return ResolvedConfig(**resolved)


def _validate_section(section: str, values: Dict[str, Any]) -> BaseModel:
    try:
        return SECTIONS[section].model_validate(values)
    except PydanticValidationError as e:
        first = e.errors()[0]
        loc = ".".join(str(part) for part in first["loc"])
        raise ValidationError(first["msg"], key=f"{section}.{loc}" if loc else section)


def apply_overrides(config: ResolvedConfig, section: str, updates: Dict[str, Any]) -> ResolvedConfig:
    """
    Override keys of one section (command-line flags) and re-validate it.

    Raises:
        ValidationError: an override breaks a range or type check
    """
    if not updates:
        return config
    current = getattr(config, section).model_dump()
    return config.model_copy(update={section: _validate_section(section, {**current, **updates})})


def load_config(path: Optional[os.PathLike]) -> ResolvedConfig:
    """
    Load and validate an experiment configuration file.

    Args:
        path: INI file path, or None for pure defaults

    Returns:
        ResolvedConfig with all defaults materialized
    """
    if path is None:
        return ResolvedConfig()
    path = pathlib.Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}", key="--config")
    return parse_config_text(path.read_text(encoding="utf-8"))


def config_help() -> str:
    """Render every configuration key with its default, for `--help`."""
    lines: List[str] = []
    for section, model in SECTIONS.items():
        lines.append(f"[{section}]")
        for name, field in model.model_fields.items():
            default = field.get_default(call_default_factory=True)
            if isinstance(default, list):
                default = ",".join(str(v) for v in default)
            description = f"  ; {field.description}" if field.description else ""
            lines.append(f"{name} = {default}{description}")
        lines.append("")
    return "\n".join(lines)
