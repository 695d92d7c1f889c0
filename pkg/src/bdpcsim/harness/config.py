"""JSON config files whose keys mirror SimConfig."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional

from ..core import ConfigError, SimConfig, preset_config


def read_config_file(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def load_config(path=None, preset: Optional[str] = None, **overrides) -> SimConfig:
    """Preset first, then file keys, then explicit overrides."""
    data = read_config_file(path) if path is not None else {}
    # validates key names before anything is merged
    SimConfig.from_dict({**SimConfig().to_dict(), **data})
    if preset is not None:
        return preset_config(preset, **{**data, **overrides})
    return SimConfig.from_dict({**SimConfig().to_dict(), **data, **overrides})


def save_config(cfg: SimConfig, path) -> None:
    Path(path).write_text(canonical_json(cfg.to_dict()) + "\n")


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: SimConfig, ignore_seed: bool = True) -> str:
    data = cfg.to_dict()
    if ignore_seed:
        data.pop("seed")
    return hashlib.sha256(canonical_json(data).encode()).hexdigest()
