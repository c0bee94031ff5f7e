import json
import os
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from osp_influence import experiments
from osp_influence import graph as g
from osp_influence.errors import ConfigError
from osp_influence.simulator import SimulationConfig, run
from osp_influence.solver import rank

SMALL = SimulationConfig(wall_size=3, feed_size=5, total_events=50_000, seed=11)


def test_comparison_skips_zero_model_values() -> None:
    result = experiments.ComparisonReport(
        "demo",
        [
            experiments.ComparisonPoint("a", "x", 0.5, 0.51, 0.01),
            experiments.ComparisonPoint("a", "y", 0.0, 0.002, 0.001),
            experiments.ComparisonPoint("b", "x", 0.2, 0.19, 0.01),
        ],
    )
    assert result.max_absolute_error == pytest.approx(0.01)
    assert result.max_relative_error == pytest.approx(0.05)
    assert np.isnan(result.points[1].relative_error)
    assert set(result.by_point()) == {"a", "b"}


def test_comparison_report_files(tmp_path: Path) -> None:
    result = experiments.ComparisonReport(
        "demo", [experiments.ComparisonPoint("N3", "average", 0.2, 0.21, 0.01)]
    )
    result.write(tmp_path)
    assert (tmp_path / "demo" / "N3.csv").read_text(encoding="utf-8").startswith("key,model,")
    summary = json.loads((tmp_path / "demo" / "summary.json").read_text(encoding="utf-8"))
    assert summary["max_relative_error"] == pytest.approx(0.05)
    assert summary["points"]["N3"]["max_absolute_error"] == pytest.approx(0.01)


def test_unknown_scenario() -> None:
    with pytest.raises(ConfigError):
        experiments.run_scenario("validation-star")
    with pytest.raises(ConfigError):
        experiments.run_exploitation("star_position")


def test_scenario_names() -> None:
    assert list(experiments.scenario_names()) == [
        "exploitation-corner",
        "exploitation-grid",
        "exploitation-ring",
        "exploitation-tree",
        "robustness-interarrival",
        "robustness-policies",
        "validation-complete",
        "validation-grid",
        "validation-ring",
    ]


def test_ring_study() -> None:
    table = experiments.run_exploitation("ring_radius")
    for rho in (0.1, 1.0, 10.0):
        q = table.column("q", rho=rho)
        assert len(q) == 31
        for k in range(1, 31):
            assert q[k] == pytest.approx(q[31 - k], abs=1e-9)
        half = q[:16]
        assert np.all(np.diff(half) <= 1e-12)
        assert int(np.argmin(q)) in (15, 16)

    gaps = table.properties["direct_indirect_gap"]
    relative = [gaps[key]["relative_gap"] for key in ("0.1", "1", "10")]
    assert relative[0] < relative[1] < relative[2]


def test_grid_study() -> None:
    table = experiments.run_exploitation("grid_position")
    psi = table.column("psi").reshape(20, 20)
    np.testing.assert_allclose(psi, psi.T, atol=1e-9)
    np.testing.assert_allclose(psi, psi[::-1, :], atol=1e-9)
    np.testing.assert_allclose(psi, psi[:, ::-1], atol=1e-9)
    assert table.properties["argmax"] in {(1, 1), (1, 18), (18, 1), (18, 18)}
    assert table.properties["argmin"] in {(0, 0), (0, 19), (19, 0), (19, 19)}


def test_grid_top_four_are_corner_diagonals() -> None:
    table = experiments.run_exploitation("grid_position")
    top = [divmod(user, 20) for user, _ in rank(table.column("psi"))[:4]]
    assert set(top) == {(1, 1), (1, 18), (18, 1), (18, 18)}


def test_corner_study() -> None:
    table = experiments.run_exploitation("corner_activity")
    corner = table.column("psi_corner")
    diagonal = table.column("psi_diagonal")
    center = table.column("psi_center")
    assert np.all(np.diff(corner) > 0)
    assert np.all(np.diff(diagonal) < 0)
    assert np.ptp(center) < 1e-6
    assert table.rows[-1]["lambda_corner"] == 100.0
    assert table.rows[-1]["argmax"] == table.properties["corner"]


def test_tree_study() -> None:
    table = experiments.run_exploitation("tree_position")
    rows = {r["user"]: r for r in table.rows}
    assert rows[table.properties["argmin"]]["leaf"]
    assert rows[table.properties["argmax"]]["parent_of_leaf"]


def test_exploitation_writes_table(tmp_path: Path) -> None:
    experiments.run_exploitation("tree_position", {"branching": 2, "depth": 2}, output_dir=tmp_path)
    lines = (tmp_path / "exploitation-tree" / "table.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "user,leaf,parent_of_leaf,psi"
    assert len(lines) == 8
    assert (tmp_path / "exploitation-tree" / "summary.json").exists()


def test_validation_complete_small(tmp_path: Path) -> None:
    result = experiments.run_validation(
        "complete", {"n_values": [3], "rhos": [1.0]}, SMALL, output_dir=tmp_path
    )
    assert [(p.point, p.key) for p in result.points] == [("N3_rho1", "average")]
    assert result.points[0].model == pytest.approx(0.2)
    assert result.max_relative_error < 0.1
    assert (tmp_path / "validation-complete" / "N3_rho1.csv").exists()
    assert (tmp_path / "validation-complete" / "summary.json").exists()


def test_validation_grid_positions() -> None:
    result = experiments.run_validation("grid", {"sides": [3]}, SMALL)
    assert [p.key for p in result.points] == ["corner", "edge", "center"]
    assert result.max_absolute_error < 0.02


def test_validation_ring_small() -> None:
    params = {"n_users": 7, "max_radius": 3, "rel_precision": 0.5, "min_replications": 2, "max_replications": 3}
    result = experiments.run_validation("ring", params, SMALL)
    assert [p.key for p in result.points] == [str(u) for u in range(7)]
    again = experiments.run_validation("ring", params, SMALL)
    assert [p.simulated for p in again.points] == [p.simulated for p in result.points]


def test_robustness_small() -> None:
    result = experiments.run_robustness("interarrival", {"n_values": [3], "rel_precision": None}, SMALL)
    assert [p.key for p in result.points] == ["exponential", "deterministic", "hyperexponential"]
    deviation = experiments.deviation_from(result, "exponential")
    assert deviation["N3"]["exponential"] == 0.0
    assert all(d < 0.15 for d in deviation["N3"].values())


def test_robustness_pools_replications() -> None:
    params = {
        "n_values": [3],
        "variants": ["random/random"],
        "rel_precision": 10.0,
        "min_replications": 2,
        "max_replications": 2,
    }
    result = experiments.run_robustness("policies", params, SMALL)
    graph = g.new_complete(3, g.ActivityRates(10.0, 5.0))
    runs = [run(graph, replace(SMALL, seed=SMALL.seed + r)) for r in range(2)]
    expected = np.mean([r.psi_hat.mean() for r in runs])
    assert result.points[0].simulated == pytest.approx(expected, rel=1e-12)


def test_robustness_unknown_dimension() -> None:
    with pytest.raises(ConfigError):
        experiments.run_robustness("network")


@pytest.mark.slow
def test_validation_complete() -> None:
    result = experiments.run_validation("complete", workers=4)
    assert result.max_relative_error <= 0.02


@pytest.mark.slow
def test_validation_grid() -> None:
    result = experiments.run_validation("grid", workers=3)
    assert result.max_absolute_error <= 5e-3


@pytest.mark.slow
def test_validation_ring() -> None:
    result = experiments.run_validation("ring", workers=os.cpu_count() or 1)
    assert result.max_relative_error <= 0.05


@pytest.mark.slow
def test_robustness_interarrival() -> None:
    result = experiments.run_robustness("interarrival", workers=4)
    for deviations in experiments.deviation_from(result, "exponential").values():
        assert deviations["deterministic"] < 0.03
        assert deviations["hyperexponential"] < 0.03


@pytest.mark.slow
def test_robustness_policies() -> None:
    result = experiments.run_robustness("policies", workers=4)
    for deviations in experiments.deviation_from(result, "random/random").values():
        assert deviations["newest/oldest"] < 0.03
