"""
Leader/follower graph of the platform users with their activity rates.

Edge direction follows the platform semantics: ``i`` is a leader of ``j`` when
everything ``i`` puts on its Wall shows up in the Newsfeed of ``j``. Users are
dense 0-based indices internally; the JSON file format keeps arbitrary string
ids and maps them to indices in file order.
"""

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence, Union

import networkx as nx
import numpy as np
import structlog

from osp_influence.errors import ConfigError, GraphValidationError, SchemaError, Violation

log = structlog.get_logger()

SELF_LOOP = "self_loop"
EMPTY_LEADER_SET = "empty_leader_set"
INACTIVE_USER = "inactive_user"
NEGATIVE_RATE = "negative_rate"
NON_FINITE_RATE = "non_finite_rate"
UNKNOWN_LEADER = "unknown_leader"
DUPLICATE_LEADER = "duplicate_leader"
DUPLICATE_USER = "duplicate_user"
TOO_FEW_USERS = "too_few_users"


@dataclass(frozen=True)
class ActivityRates:
    """Self-post rate ``lam`` and re-post rate ``mu`` of one user (posts per time unit)."""

    lam: float
    mu: float

    @property
    def total(self) -> float:
        return self.lam + self.mu


RatesArg = Union[ActivityRates, Sequence[ActivityRates]]


@dataclass(frozen=True)
class LeaderGraph:
    leaders: tuple[tuple[int, ...], ...]
    rates: tuple[ActivityRates, ...]
    ids: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        if len(self.rates) != len(self.leaders):
            raise ValueError(
                f"{len(self.leaders)} leader lists but {len(self.rates)} rate entries"
            )
        if not self.ids:
            object.__setattr__(self, "ids", tuple(str(n) for n in range(len(self.leaders))))
        elif len(self.ids) != len(self.leaders):
            raise ValueError(f"{len(self.leaders)} users but {len(self.ids)} ids")

    @property
    def n_users(self) -> int:
        return len(self.leaders)

    @property
    def n_edges(self) -> int:
        return sum(len(ls) for ls in self.leaders)

    @cached_property
    def followers(self) -> tuple[tuple[int, ...], ...]:
        """Transpose of the leader relation."""
        out: list[list[int]] = [[] for _ in range(self.n_users)]
        for j, ls in enumerate(self.leaders):
            for k in ls:
                if 0 <= k < self.n_users:
                    out[k].append(j)
        return tuple(tuple(sorted(fs)) for fs in out)

    @cached_property
    def lambdas(self) -> np.ndarray:
        return np.array([r.lam for r in self.rates], dtype=float)

    @cached_property
    def mus(self) -> np.ndarray:
        return np.array([r.mu for r in self.rates], dtype=float)

    def with_rates(self, user: int, rates: ActivityRates) -> "LeaderGraph":
        new_rates = list(self.rates)
        new_rates[user] = rates
        return replace(self, rates=tuple(new_rates))


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def is_valid(self) -> bool:
        return not self.violations

    def raise_for_violations(self) -> None:
        if self.violations:
            raise GraphValidationError(self.violations)


def validate(graph: LeaderGraph) -> ValidationReport:
    """Collect every broken invariant; an empty report means the graph is usable."""
    report = ValidationReport()
    n = graph.n_users
    if n < 2:
        report.violations.append(Violation("*", TOO_FEW_USERS, f"{n} users, need at least 2"))
    for user, (ls, rates) in enumerate(zip(graph.leaders, graph.rates)):
        uid = graph.ids[user]
        if not ls:
            report.violations.append(Violation(uid, EMPTY_LEADER_SET))
        if user in ls:
            report.violations.append(Violation(uid, SELF_LOOP))
        if len(set(ls)) != len(ls):
            report.violations.append(Violation(uid, DUPLICATE_LEADER))
        bad = [k for k in ls if not 0 <= k < n]
        if bad:
            report.violations.append(Violation(uid, UNKNOWN_LEADER, f"indices {bad}"))

        if not (math.isfinite(rates.lam) and math.isfinite(rates.mu)):
            report.violations.append(
                Violation(uid, NON_FINITE_RATE, f"lambda={rates.lam}, mu={rates.mu}")
            )
            continue
        if rates.lam < 0 or rates.mu < 0:
            report.violations.append(
                Violation(uid, NEGATIVE_RATE, f"lambda={rates.lam}, mu={rates.mu}")
            )
        elif rates.total <= 0:
            report.violations.append(Violation(uid, INACTIVE_USER, "lambda + mu = 0"))
    return report


def _rates_for(n_users: int, rates: RatesArg) -> tuple[ActivityRates, ...]:
    if isinstance(rates, ActivityRates):
        return (rates,) * n_users
    rates = tuple(rates)
    if len(rates) != n_users:
        raise ConfigError(f"expected {n_users} rate entries, got {len(rates)}")
    return rates


def from_networkx(
    digraph: nx.DiGraph, rates: RatesArg, ids: Sequence[str] = ()
) -> LeaderGraph:
    """Edge (i, j) of ``digraph`` means i is a leader of j. Nodes are taken in sorted order."""
    g = nx.convert_node_labels_to_integers(digraph, ordering="sorted")
    leaders = tuple(tuple(sorted(g.predecessors(j))) for j in range(g.number_of_nodes()))
    graph = LeaderGraph(leaders, _rates_for(len(leaders), rates), tuple(ids))
    validate(graph).raise_for_violations()
    return graph


def to_networkx(graph: LeaderGraph) -> nx.DiGraph:
    g = nx.DiGraph()
    for n, rates in enumerate(graph.rates):
        g.add_node(n, id=graph.ids[n], lam=rates.lam, mu=rates.mu)
    for j, ls in enumerate(graph.leaders):
        g.add_edges_from((k, j) for k in ls)
    return g


def new_complete(n_users: int, rates: RatesArg) -> LeaderGraph:
    if n_users < 2:
        raise ConfigError(f"complete graph needs at least 2 users, got {n_users}")
    return from_networkx(nx.complete_graph(n_users, create_using=nx.DiGraph), rates)


def new_grid(rows: int, cols: int, rates: RatesArg) -> LeaderGraph:
    """rows x cols lattice, 4-neighbourhood, mutual leader/follower; user id = r * cols + c."""
    if rows < 2 or cols < 2:
        raise ConfigError(f"grid must be at least 2x2, got {rows}x{cols}")
    lattice = nx.grid_2d_graph(rows, cols).to_directed()
    return from_networkx(lattice, rates)


def new_ring(
    n_users: int, radii: Union[int, Sequence[int]], rates: RatesArg
) -> LeaderGraph:
    """User i follows i+1..i+R_i and i-1..i-R_i (mod N)."""
    if n_users < 3:
        raise ConfigError(f"ring needs at least 3 users, got {n_users}")
    radii = [radii] * n_users if isinstance(radii, int) else list(radii)
    if len(radii) != n_users:
        raise ConfigError(f"expected {n_users} radii, got {len(radii)}")
    max_radius = (n_users - 1) // 2
    ring = nx.DiGraph()
    ring.add_nodes_from(range(n_users))
    for i, r in enumerate(radii):
        if not 1 <= r <= max_radius:
            raise ConfigError(f"radius of user {i} must be in [1, {max_radius}], got {r}")
        for d in range(1, r + 1):
            ring.add_edge((i + d) % n_users, i)
            ring.add_edge((i - d) % n_users, i)
    return from_networkx(ring, rates)


def new_tree(branching: int, depth: int, rates: RatesArg) -> LeaderGraph:
    """Balanced tree, parent and child follow each other; user 0 is the root."""
    if branching < 1 or depth < 1:
        raise ConfigError(
            f"tree needs branching >= 1 and depth >= 1, got {branching}, {depth}"
        )
    tree = nx.balanced_tree(branching, depth).to_directed()
    return from_networkx(tree, rates)


def random_rates(
    n_users: int, low: float, high: float, rng: np.random.Generator
) -> tuple[ActivityRates, ...]:
    draws = rng.uniform(low, high, size=(n_users, 2))
    return tuple(ActivityRates(float(lam), float(mu)) for lam, mu in draws)


def _check_schema(data: Any) -> list[dict[str, Any]]:
    if not isinstance(data, dict) or not isinstance(data.get("users"), list):
        raise SchemaError("graph file must be an object with a 'users' list")
    users = data["users"]
    for pos, user in enumerate(users):
        if not isinstance(user, dict):
            raise SchemaError(f"users[{pos}] must be an object")
        missing = {"id", "lambda", "mu", "leaders"} - set(user)
        if missing:
            raise SchemaError(f"users[{pos}] misses keys: {', '.join(sorted(missing))}")
        if not isinstance(user["id"], str):
            raise SchemaError(f"users[{pos}].id must be a string")
        for key in ("lambda", "mu"):
            value = user[key]
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise SchemaError(f"users[{pos}].{key} must be a number")
        if not isinstance(user["leaders"], list) or not all(
            isinstance(x, str) for x in user["leaders"]
        ):
            raise SchemaError(f"users[{pos}].leaders must be a list of strings")
    return users


def from_file(path: Union[str, Path]) -> LeaderGraph:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: not valid JSON: {e}")

    users = _check_schema(data)
    index: dict[str, int] = {}
    violations: list[Violation] = []
    for n, user in enumerate(users):
        if user["id"] in index:
            violations.append(Violation(user["id"], DUPLICATE_USER))
        index.setdefault(user["id"], n)

    leaders: list[tuple[int, ...]] = []
    for user in users:
        unknown = [x for x in user["leaders"] if x not in index]
        if unknown:
            violations.append(Violation(user["id"], UNKNOWN_LEADER, f"ids {unknown}"))
        leaders.append(tuple(sorted(index[x] for x in user["leaders"] if x in index)))

    graph = LeaderGraph(
        leaders=tuple(leaders),
        rates=tuple(ActivityRates(float(u["lambda"]), float(u["mu"])) for u in users),
        ids=tuple(u["id"] for u in users),
    )
    violations.extend(validate(graph).violations)
    if violations:
        log.error("Invalid graph file", path=str(path), violations=len(violations))
        raise GraphValidationError(violations)

    log.info("Graph loaded", path=str(path), n_users=graph.n_users, n_edges=graph.n_edges)
    return graph


def to_dict(graph: LeaderGraph) -> dict[str, Any]:
    return {
        "users": [
            {
                "id": graph.ids[n],
                "lambda": rates.lam,
                "mu": rates.mu,
                "leaders": [graph.ids[k] for k in graph.leaders[n]],
            }
            for n, rates in enumerate(graph.rates)
        ]
    }


def to_file(graph: LeaderGraph, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(to_dict(graph), f, indent=2, sort_keys=True)
        f.write("\n")
