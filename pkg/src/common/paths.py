from pathlib import Path
from typing import Union

PROJECT_MARKERS = (".git", "pyproject.toml")


def find_project_root(start: Path = Path(__file__).parent) -> Path:
    for parent in start.resolve().parents:
        if any((parent / marker).exists() for marker in PROJECT_MARKERS):
            return parent
    # installed outside a checkout: relative paths resolve against cwd
    return Path.cwd()


BASE_DIR = find_project_root()


def resolve_path(path: Union[str, Path]) -> Path:
    """Absolute paths as given, relative ones against the project root."""
    path = Path(path)
    return path if path.is_absolute() else BASE_DIR / path
