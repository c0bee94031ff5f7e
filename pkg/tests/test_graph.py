import json
import math
from pathlib import Path
from typing import Any, Callable

import networkx as nx
import numpy as np
import pytest

from osp_influence import graph as g
from osp_influence.errors import ConfigError, GraphValidationError, SchemaError

ONE = g.ActivityRates(1.0, 1.0)


def kinds(graph: g.LeaderGraph) -> set[str]:
    return {v.kind for v in g.validate(graph).violations}


def test_complete_graph_leaders() -> None:
    graph = g.new_complete(4, ONE)
    assert graph.n_users == 4
    assert graph.n_edges == 12
    assert graph.leaders[0] == (1, 2, 3)
    assert graph.followers[2] == (0, 1, 3)
    assert graph.ids == ("0", "1", "2", "3")


def test_grid_neighbourhood() -> None:
    graph = g.new_grid(3, 3, ONE)
    assert graph.n_users == 9
    assert graph.leaders[0] == (1, 3)
    assert graph.leaders[1] == (0, 2, 4)
    assert graph.leaders[4] == (1, 3, 5, 7)
    assert graph.n_edges == 24


def test_grid_leader_counts_on_rectangle() -> None:
    rows, cols = 4, 6
    graph = g.new_grid(rows, cols, ONE)
    counts = [len(ls) for ls in graph.leaders]
    assert counts.count(2) == 4
    assert counts.count(3) == 2 * (rows - 2) + 2 * (cols - 2)
    assert counts.count(4) == (rows - 2) * (cols - 2)
    assert sorted(counts[u] for u in (0, cols - 1, (rows - 1) * cols, rows * cols - 1)) == [2, 2, 2, 2]


def test_grid_relation_is_symmetric() -> None:
    graph = g.new_grid(4, 5, ONE)
    for j, ls in enumerate(graph.leaders):
        for k in ls:
            assert j in graph.leaders[k]


def test_ring_uniform_radius() -> None:
    graph = g.new_ring(7, 2, ONE)
    assert graph.leaders[0] == (1, 2, 5, 6)
    assert graph.leaders[3] == (1, 2, 4, 5)


def test_ring_per_user_radius() -> None:
    graph = g.new_ring(7, [1, 3, 1, 1, 1, 1, 1], ONE)
    assert graph.leaders[1] == (0, 2, 3, 4, 5, 6)
    assert graph.leaders[0] == (1, 6)


@pytest.mark.parametrize("radius", [0, 4])
def test_ring_rejects_radius_out_of_range(radius: int) -> None:
    with pytest.raises(ConfigError):
        g.new_ring(8, radius, ONE)


@pytest.mark.parametrize(
    "build",
    [
        lambda: g.new_complete(1, ONE),
        lambda: g.new_grid(1, 5, ONE),
        lambda: g.new_ring(2, 1, ONE),
        lambda: g.new_tree(0, 2, ONE),
        lambda: g.new_complete(3, [ONE, ONE]),
    ],
)
def test_generators_reject_bad_parameters(build: Callable[[], g.LeaderGraph]) -> None:
    with pytest.raises(ConfigError):
        build()


def test_tree_parent_and_child_lead_each_other() -> None:
    graph = g.new_tree(2, 2, ONE)
    assert graph.n_users == 7
    assert graph.leaders[0] == (1, 2)
    assert graph.leaders[1] == (0, 3, 4)
    assert graph.leaders[3] == (1,)
    assert g.validate(graph).is_valid


def test_valid_graph_has_empty_report() -> None:
    report = g.validate(g.new_complete(3, ONE))
    assert report.is_valid
    report.raise_for_violations()


@pytest.mark.parametrize(
    "leaders, rates, expected",
    [
        (((1,), ()), (ONE, ONE), g.EMPTY_LEADER_SET),
        (((0, 1), (0,)), (ONE, ONE), g.SELF_LOOP),
        (((1, 1), (0,)), (ONE, ONE), g.DUPLICATE_LEADER),
        (((5,), (0,)), (ONE, ONE), g.UNKNOWN_LEADER),
        (((1,), (0,)), (g.ActivityRates(-1.0, 1.0), ONE), g.NEGATIVE_RATE),
        (((1,), (0,)), (g.ActivityRates(math.nan, 1.0), ONE), g.NON_FINITE_RATE),
        (((1,), (0,)), (g.ActivityRates(0.0, 0.0), ONE), g.INACTIVE_USER),
    ],
)
def test_validate_reports_violation(
    leaders: tuple[tuple[int, ...], ...], rates: tuple[g.ActivityRates, ...], expected: str
) -> None:
    graph = g.LeaderGraph(leaders, rates)
    assert expected in kinds(graph)
    with pytest.raises(GraphValidationError) as exc:
        g.validate(graph).raise_for_violations()
    assert any(v.kind == expected for v in exc.value.violations)


def test_validate_collects_every_violation() -> None:
    graph = g.LeaderGraph(((), (1,)), (g.ActivityRates(0.0, 0.0), ONE), ("a", "b"))
    violations = g.validate(graph).violations
    assert {(v.user, v.kind) for v in violations} == {
        ("a", g.EMPTY_LEADER_SET),
        ("a", g.INACTIVE_USER),
        ("b", g.SELF_LOOP),
    }


@pytest.mark.parametrize("n_users", [0, 1])
def test_validate_rejects_too_few_users(n_users: int) -> None:
    graph = g.LeaderGraph(((),) * n_users, (ONE,) * n_users)
    assert g.TOO_FEW_USERS in kinds(graph)


def test_from_file_rejects_empty_user_list(tmp_path: Path) -> None:
    path = tmp_path / "graph.json"
    write_json(path, {"users": []})
    with pytest.raises(GraphValidationError) as exc:
        g.from_file(path)
    assert [v.kind for v in exc.value.violations] == [g.TOO_FEW_USERS]


def test_zero_self_post_rate_is_valid() -> None:
    graph = g.new_complete(3, g.ActivityRates(0.0, 1.0))
    assert g.validate(graph).is_valid


def test_with_rates_changes_one_user() -> None:
    graph = g.new_complete(3, ONE)
    changed = graph.with_rates(1, g.ActivityRates(5.0, 2.0))
    assert changed.rates[1] == g.ActivityRates(5.0, 2.0)
    assert changed.rates[0] == ONE
    assert graph.rates[1] == ONE
    assert changed.leaders == graph.leaders


def test_networkx_round_trip_keeps_edge_direction() -> None:
    digraph = nx.DiGraph([(0, 1), (1, 2), (2, 0)])
    graph = g.from_networkx(digraph, ONE)
    assert graph.leaders == ((2,), (0,), (1,))
    back = g.to_networkx(graph)
    assert set(back.edges) == set(digraph.edges)
    assert back.nodes[0]["lam"] == 1.0


def test_random_rates_within_range() -> None:
    rates = g.random_rates(50, 0.1, 10.0, np.random.default_rng(1))
    assert len(rates) == 50
    assert all(0.1 <= r.lam <= 10.0 and 0.1 <= r.mu <= 10.0 for r in rates)


def test_file_round_trip_keeps_ids(tmp_path: Path) -> None:
    graph = g.LeaderGraph(
        ((1,), (0, 2), (1,)),
        (ONE, g.ActivityRates(2.0, 0.5), ONE),
        ("alice", "bob", "carol"),
    )
    path = tmp_path / "graph.json"
    g.to_file(graph, path)
    loaded = g.from_file(path)
    assert loaded == graph


def write_json(path: Path, data: Any) -> None:
    path.write_text(json.dumps(data), encoding="utf-8")


def test_from_file_maps_string_ids_in_file_order(tmp_path: Path) -> None:
    path = tmp_path / "graph.json"
    write_json(
        path,
        {
            "users": [
                {"id": "z", "lambda": 1, "mu": 1, "leaders": ["y"]},
                {"id": "y", "lambda": 1, "mu": 1, "leaders": ["z"]},
            ]
        },
    )
    graph = g.from_file(path)
    assert graph.ids == ("z", "y")
    assert graph.leaders == ((1,), (0,))


def test_from_file_reports_unknown_and_duplicate_ids(tmp_path: Path) -> None:
    path = tmp_path / "graph.json"
    write_json(
        path,
        {
            "users": [
                {"id": "a", "lambda": 1, "mu": 1, "leaders": ["b", "ghost"]},
                {"id": "b", "lambda": 1, "mu": 1, "leaders": ["a"]},
                {"id": "b", "lambda": 1, "mu": 1, "leaders": ["a"]},
            ]
        },
    )
    with pytest.raises(GraphValidationError) as exc:
        g.from_file(path)
    found = {(v.user, v.kind) for v in exc.value.violations}
    assert ("a", g.UNKNOWN_LEADER) in found
    assert ("b", g.DUPLICATE_USER) in found


@pytest.mark.parametrize(
    "data",
    [
        [],
        {"nodes": []},
        {"users": [{"id": "a", "lambda": 1, "mu": 1}]},
        {"users": [{"id": 1, "lambda": 1, "mu": 1, "leaders": []}]},
        {"users": [{"id": "a", "lambda": "fast", "mu": 1, "leaders": []}]},
        {"users": [{"id": "a", "lambda": 1, "mu": 1, "leaders": "b"}]},
    ],
)
def test_from_file_schema_errors(tmp_path: Path, data: Any) -> None:
    path = tmp_path / "graph.json"
    write_json(path, data)
    with pytest.raises(SchemaError):
        g.from_file(path)


def test_from_file_rejects_broken_json(tmp_path: Path) -> None:
    path = tmp_path / "graph.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(SchemaError):
        g.from_file(path)
