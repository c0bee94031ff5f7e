import yaml
from pathlib import Path
from typing import Any, Union
from common.paths import resolve_path


def load_config(
    config_path: Union[str, Path, None], default_config: dict[str, Any]
) -> dict[str, Any]:
    """
    Overlay a YAML (or JSON, which YAML reads too) config file on the defaults.
    Relative paths resolve against the project root. No path -> defaults only.
    """
    config = default_config.copy()
    if config_path is None:
        return config

    full_path = resolve_path(config_path)
    if not full_path.exists():
        raise FileNotFoundError(f"Config file at '{full_path}' path not found")

    with open(full_path, "r", encoding="utf-8") as f:
        try:
            file_config = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ValueError(f"Failed to parse YAML config: {e}")

    if not isinstance(file_config, dict):
        raise ValueError(f"Config root must be a mapping, got {type(file_config).__name__}")

    unknown = sorted(set(file_config) - set(default_config))
    if unknown:
        raise ValueError(f"Unknown config keys: {', '.join(unknown)}")

    config.update(file_config)
    return config
