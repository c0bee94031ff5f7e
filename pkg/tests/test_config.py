from pathlib import Path

import pytest

from common.config import load_config
from common.paths import BASE_DIR, resolve_path
from osp_influence.main import DEFAULT_CONFIG

DEFAULTS = {"SEED": 1, "OUTPUT_DIR": "results", "LOG_FILE": None}


def test_no_path_gives_defaults() -> None:
    config = load_config(None, DEFAULTS)
    assert config == DEFAULTS
    assert config is not DEFAULTS


def test_file_overrides_defaults(tmp_path: Path) -> None:
    path = tmp_path / "config.yaml"
    path.write_text("SEED: 7\n", encoding="utf-8")
    assert load_config(path, DEFAULTS) == {"SEED": 7, "OUTPUT_DIR": "results", "LOG_FILE": None}


def test_json_config_is_accepted(tmp_path: Path) -> None:
    path = tmp_path / "config.json"
    path.write_text('{"OUTPUT_DIR": "out"}', encoding="utf-8")
    assert load_config(path, DEFAULTS)["OUTPUT_DIR"] == "out"


def test_missing_file(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "nope.yaml", DEFAULTS)


@pytest.mark.parametrize("content", ["SEED: [1\n", "- 1\n- 2\n", "COLOR: red\n"])
def test_bad_config_files(tmp_path: Path, content: str) -> None:
    path = tmp_path / "config.yaml"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(ValueError):
        load_config(path, DEFAULTS)


def test_resolve_path(tmp_path: Path) -> None:
    assert resolve_path(tmp_path) == tmp_path
    assert resolve_path("configs/osp_influence.yaml") == BASE_DIR / "configs" / "osp_influence.yaml"


def test_shipped_config_loads() -> None:
    config = load_config("configs/osp_influence.yaml", DEFAULT_CONFIG)
    assert config["TOTAL_EVENTS"] == 300_000
    assert config["TOL"] == 1e-12
