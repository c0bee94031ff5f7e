"""
Serialisation of solver and simulator results.

Floats are written with 12 significant digits and JSON keys are sorted, so the
same inputs always give byte-identical files.
"""

import csv
import io
import json
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

import numpy as np

from osp_influence.simulator import SimEstimate
from osp_influence.solver import SolutionSet


def fmt(x: float) -> str:
    return f"{float(x):.12g}"


def canonical(value: Any) -> Any:
    """Round floats (also inside arrays and containers) to 12 significant digits."""
    if isinstance(value, np.ndarray):
        return canonical(value.tolist())
    if isinstance(value, (list, tuple)):
        return [canonical(v) for v in value]
    if isinstance(value, dict):
        return {str(k): canonical(v) for k, v in value.items()}
    if isinstance(value, (float, np.floating)):
        x = float(value)
        return float(fmt(x)) if np.isfinite(x) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def to_json(data: dict[str, Any]) -> str:
    return json.dumps(canonical(data), sort_keys=True, indent=2) + "\n"


def _csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buffer.getvalue()


def _ids(n: int, ids: Optional[Sequence[str]]) -> Sequence[str]:
    return ids if ids else [str(u) for u in range(n)]


def solution_to_csv(solution: SolutionSet, ids: Optional[Sequence[str]] = None) -> str:
    names = _ids(solution.n_users, ids)
    n = solution.n_users
    rows = (
        (names[i], names[u], solution.P[i, u], solution.Q[i, u])
        for i in range(n)
        for u in range(n)
    )
    return _csv(("label", "user", "p", "q"), rows)


def solution_to_json(
    solution: SolutionSet, ranking: Optional[Sequence[dict[str, Any]]] = None
) -> str:
    data: dict[str, Any] = {"psi": solution.psi, "P": solution.P, "Q": solution.Q}
    if ranking is not None:
        data["ranking"] = list(ranking)
    return to_json(data)


def estimate_to_csv(estimate: SimEstimate, ids: Optional[Sequence[str]] = None) -> str:
    n = estimate.Q_hat.shape[0]
    names = _ids(n, ids)
    rows = (
        (names[i], names[u], estimate.Q_hat[i, u], estimate.half_width[i, u])
        for i in range(n)
        for u in range(n)
    )
    return _csv(("label", "user", "q_hat", "half_width"), rows)


def estimate_to_json(estimate: SimEstimate) -> str:
    return to_json(
        {
            "psi": estimate.psi_hat,
            "psi_half_width": estimate.psi_half_width,
            "P": estimate.P_hat,
            "Q": estimate.Q_hat,
            "half_width": estimate.half_width,
        }
    )


def ranking_rows(
    ranking: Sequence[tuple[int, float]], ids: Optional[Sequence[str]] = None
) -> list[dict[str, Any]]:
    return [
        {"rank": r + 1, "user": ids[u] if ids else str(u), "psi": v} for r, (u, v) in enumerate(ranking)
    ]


def ranking_to_csv(ranking: Sequence[tuple[int, float]], ids: Optional[Sequence[str]] = None) -> str:
    """``ids`` are indexed by user, so a truncated ranking takes the full id list."""
    return table_to_csv(("rank", "user", "psi"), ranking_rows(ranking, ids))


def table_to_csv(columns: Sequence[str], rows: Sequence[dict[str, Any]]) -> str:
    return _csv(columns, ([row[c] for c in columns] for row in rows))


def write_text(content: str, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(content)
    return path
