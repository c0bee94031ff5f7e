"""
Scenario runners: model-vs-simulation validation, robustness to the modeling
assumptions, and solver-only exploitation studies.

Each scenario is fully determined by its parameters and seed. Points are
independent and may be spread over a process pool; reports are assembled in
point order whatever the completion order.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Sequence, Union

import numpy as np
import structlog

from osp_influence import graph as g
from osp_influence import report
from osp_influence.errors import ConfigError
from osp_influence.simulator import (
    Interarrival,
    SimEstimate,
    SimulationConfig,
    influence,
    replicate_to_precision,
    run,
)
from osp_influence.solver import (
    SolutionSet,
    build_system,
    direct_indirect_gap,
    solve_direct,
)

log = structlog.get_logger()

ZERO = 1e-12

SCENARIOS: dict[str, dict[str, Any]] = {
    "validation-complete": {"n_values": [5, 10, 20, 40], "rhos": [0.5, 1.0, 2.0], "mu": 1.0},
    "validation-grid": {"sides": [3, 5, 7], "lam": 5.0, "mu": 3.0},
    "validation-ring": {
        "n_users": 31,
        "max_radius": 15,
        "rate_low": 0.1,
        "rate_high": 10.0,
        "graph_seed": 2019,
        # the least active users need about 10^8 events for a 2.5% interval
        "rel_precision": 0.025,
        "min_replications": 4,
        "max_replications": 400,
    },
    "robustness-interarrival": {
        "n_values": [5, 10, 20],
        "lam": 10.0,
        "mu": 5.0,
        "variants": ["exponential", "deterministic", "hyperexponential"],
        "scv": 4.0,
        "rel_precision": 0.005,
        "min_replications": 4,
        "max_replications": 64,
    },
    "robustness-policies": {
        "n_values": [5, 10, 20],
        "lam": 10.0,
        "mu": 5.0,
        "variants": [
            "random/random",
            "newest/random",
            "random/oldest",
            "newest/oldest",
            "most_popular/random",
            "least_popular/random",
        ],
        "rel_precision": 0.005,
        "min_replications": 4,
        "max_replications": 64,
    },
    "exploitation-ring": {"n_users": 31, "radius": 3, "rhos": [0.1, 1.0, 10.0], "mu": 1.0},
    "exploitation-grid": {"rows": 20, "cols": 20, "lam": 10.0, "mu": 10.0},
    "exploitation-corner": {
        "rows": 20,
        "cols": 20,
        "lam": 10.0,
        "mu": 10.0,
        "corner_lambdas": [0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0],
    },
    "exploitation-tree": {"branching": 3, "depth": 3, "lam": 1.0, "mu": 1.0},
}


@dataclass(frozen=True)
class ComparisonPoint:
    point: str
    key: str
    model: float
    simulated: float
    half_width: float

    @property
    def absolute_error(self) -> float:
        return abs(self.simulated - self.model)

    @property
    def relative_error(self) -> float:
        return self.absolute_error / self.model if self.model > ZERO else float("nan")


@dataclass
class ComparisonReport:
    scenario: str
    points: list[ComparisonPoint] = field(default_factory=list)

    @property
    def max_absolute_error(self) -> float:
        errors = [p.absolute_error for p in self.points if p.model > ZERO]
        return max(errors, default=0.0)

    @property
    def max_relative_error(self) -> float:
        errors = [p.relative_error for p in self.points if p.model > ZERO]
        return max(errors, default=0.0)

    def by_point(self) -> dict[str, list[ComparisonPoint]]:
        out: dict[str, list[ComparisonPoint]] = {}
        for p in self.points:
            out.setdefault(p.point, []).append(p)
        return out

    def summary(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario,
            "max_absolute_error": self.max_absolute_error,
            "max_relative_error": self.max_relative_error,
            "points": {
                name: {
                    "max_absolute_error": max(p.absolute_error for p in pts),
                    "max_relative_error": max(
                        (p.relative_error for p in pts if p.model > ZERO), default=0.0
                    ),
                }
                for name, pts in self.by_point().items()
            },
        }

    def write(self, output_dir: Union[str, Path]) -> Path:
        directory = Path(output_dir) / self.scenario
        columns = ("key", "model", "simulated", "half_width", "absolute_error", "relative_error")
        for name, pts in self.by_point().items():
            rows = [
                {
                    "key": p.key,
                    "model": p.model,
                    "simulated": p.simulated,
                    "half_width": p.half_width,
                    "absolute_error": p.absolute_error,
                    "relative_error": p.relative_error,
                }
                for p in pts
            ]
            report.write_text(report.table_to_csv(columns, rows), directory / f"{name}.csv")
        return report.write_text(report.to_json(self.summary()), directory / "summary.json")


@dataclass
class ExploitationTable:
    study: str
    columns: tuple[str, ...]
    rows: list[dict[str, Any]] = field(default_factory=list)
    properties: dict[str, Any] = field(default_factory=dict)

    def column(self, name: str, **where: Any) -> np.ndarray:
        return np.array(
            [r[name] for r in self.rows if all(r[k] == v for k, v in where.items())]
        )

    def write(self, output_dir: Union[str, Path], point: str = "table") -> Path:
        directory = Path(output_dir) / self.study
        report.write_text(report.table_to_csv(self.columns, self.rows), directory / f"{point}.csv")
        summary = {"study": self.study, "properties": self.properties}
        return report.write_text(report.to_json(summary), directory / "summary.json")


def scenario_params(scenario: str, params: Optional[dict[str, Any]] = None) -> dict[str, Any]:
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}, expected one of {sorted(SCENARIOS)}")
    merged = dict(SCENARIOS[scenario])
    merged.update(params or {})
    return merged


def mean_influence(estimate: SimEstimate) -> np.ndarray:
    return np.array([estimate.psi_hat.mean()])


def _simulate_all(
    jobs: Sequence[tuple[g.LeaderGraph, SimulationConfig]],
    workers: int,
    p: dict[str, Any],
    statistic: Callable[[SimEstimate], np.ndarray] = influence,
) -> list[SimEstimate]:
    """
    One run per job, or, when the scenario sets ``rel_precision``, replications
    pooled per job until ``statistic`` is that precise.
    """
    if p.get("rel_precision"):
        return [
            replicate_to_precision(
                graph,
                config,
                p["rel_precision"],
                p.get("max_replications", 100),
                min_replications=p.get("min_replications", 2),
                workers=workers,
                statistic=statistic,
            )
            for graph, config in jobs
        ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, *zip(*jobs)))
    return [run(graph, config) for graph, config in jobs]


def _mean_psi(values: np.ndarray) -> float:
    return float(np.mean(values))


def compare_psi(
    point: str,
    keys: Iterable[tuple[str, Optional[int]]],
    model: SolutionSet,
    estimate: SimEstimate,
) -> list[ComparisonPoint]:
    """Model against simulated influence for each (key, user); user None is the user average."""
    points = []
    for key, user in keys:
        if user is None:
            values = (model.psi, estimate.psi_hat, estimate.psi_half_width)
            model_value, simulated, half = (_mean_psi(v) for v in values)
        else:
            model_value = float(model.psi[user])
            simulated = float(estimate.psi_hat[user])
            half = float(estimate.psi_half_width[user])
        points.append(ComparisonPoint(point, key, model_value, simulated, half))
    return points


def run_validation(
    topology: str,
    params: Optional[dict[str, Any]] = None,
    config: Optional[SimulationConfig] = None,
    workers: int = 1,
    output_dir: Optional[Union[str, Path]] = None,
) -> ComparisonReport:
    """Solver and simulator on identical graphs, point by point."""
    scenario = f"validation-{topology}"
    p = scenario_params(scenario, params)
    config = config or SimulationConfig()

    # (point name, graph, [(key, user index or None for the user average)])
    cases: list[tuple[str, g.LeaderGraph, list[tuple[str, Optional[int]]]]] = []
    if topology == "complete":
        for n in p["n_values"]:
            for rho in p["rhos"]:
                graph = g.new_complete(n, g.ActivityRates(rho * p["mu"], p["mu"]))
                cases.append((f"N{n}_rho{rho:g}", graph, [("average", None)]))
    elif topology == "grid":
        for side in p["sides"]:
            graph = g.new_grid(side, side, g.ActivityRates(p["lam"], p["mu"]))
            mid = side // 2
            positions = [("corner", 0), ("edge", mid), ("center", mid * side + mid)]
            cases.append((f"N{side * side}", graph, list(positions)))
    elif topology == "ring":
        rng = np.random.default_rng(p["graph_seed"])
        n = p["n_users"]
        radii = [int(r) for r in rng.integers(1, p["max_radius"] + 1, size=n)]
        rates = g.random_rates(n, p["rate_low"], p["rate_high"], rng)
        graph = g.new_ring(n, radii, rates)
        cases.append((f"N{n}", graph, [(graph.ids[u], u) for u in range(n)]))
    else:
        raise ConfigError(f"unknown topology {topology!r}, expected complete, grid or ring")

    models = [solve_direct(build_system(graph)) for _, graph, _ in cases]
    estimates = _simulate_all([(graph, config) for _, graph, _ in cases], workers, p)

    result = ComparisonReport(scenario)
    for (name, _, keys), model, estimate in zip(cases, models, estimates):
        result.points.extend(compare_psi(name, keys, model, estimate))
        log.info("Validation point finished", scenario=scenario, point=name)

    log.info(
        "Validation finished",
        scenario=scenario,
        max_relative_error=result.max_relative_error,
        max_absolute_error=result.max_absolute_error,
    )
    if output_dir is not None:
        result.write(output_dir)
    return result


def _variant_config(dimension: str, variant: str, base: SimulationConfig, scv: float) -> SimulationConfig:
    if dimension == "interarrival":
        dist = Interarrival(variant, scv) if variant == "hyperexponential" else Interarrival(variant)
        return replace(base, interarrival=dist)
    selection, eviction = variant.split("/")
    return replace(base, selection=selection, eviction=eviction)  # type: ignore[arg-type]


def run_robustness(
    dimension: str,
    params: Optional[dict[str, Any]] = None,
    config: Optional[SimulationConfig] = None,
    workers: int = 1,
    output_dir: Optional[Union[str, Path]] = None,
) -> ComparisonReport:
    """Average influence sum_i psi_i / N per variant against the model value."""
    if dimension not in ("interarrival", "policies"):
        raise ConfigError(f"unknown robustness dimension {dimension!r}")
    scenario = f"robustness-{dimension}"
    p = scenario_params(scenario, params)
    config = config or SimulationConfig()

    cases = []
    jobs = []
    for n in p["n_values"]:
        graph = g.new_complete(n, g.ActivityRates(p["lam"], p["mu"]))
        model = solve_direct(build_system(graph))
        for variant in p["variants"]:
            cases.append((f"N{n}", variant, model))
            jobs.append((graph, _variant_config(dimension, variant, config, p.get("scv", 4.0))))

    estimates = _simulate_all(jobs, workers, p, statistic=mean_influence)
    result = ComparisonReport(scenario)
    for (name, variant, model), estimate in zip(cases, estimates):
        result.points.extend(compare_psi(name, [(variant, None)], model, estimate))
    log.info("Robustness finished", scenario=scenario, points=len(result.points))
    if output_dir is not None:
        result.write(output_dir)
    return result


def deviation_from(result: ComparisonReport, baseline: str) -> dict[str, dict[str, float]]:
    """Relative deviation of every variant from the ``baseline`` variant, per point."""
    out: dict[str, dict[str, float]] = {}
    for name, pts in result.by_point().items():
        reference = next(p.simulated for p in pts if p.key == baseline)
        out[name] = {p.key: abs(p.simulated - reference) / reference for p in pts}
    return out


def _solve(graph: g.LeaderGraph) -> SolutionSet:
    return solve_direct(build_system(graph))


def _ring_study(p: dict[str, Any]) -> ExploitationTable:
    n = p["n_users"]
    table = ExploitationTable("exploitation-ring", ("rho", "user", "hops", "q"))
    gaps = {}
    for rho in p["rhos"]:
        graph = g.new_ring(n, p["radius"], g.ActivityRates(rho * p["mu"], p["mu"]))
        solution = _solve(graph)
        for user in range(n):
            hops = min(user, n - user)
            table.rows.append({"rho": rho, "user": user, "hops": hops, "q": solution.Q[0, user]})
        gap = direct_indirect_gap(solution.Q, graph, 0)
        direct = float(np.mean(solution.Q[0, list(graph.followers[0])]))
        gaps[f"{rho:g}"] = {"gap": gap, "relative_gap": gap / direct}
    table.properties["direct_indirect_gap"] = gaps
    return table


def _grid_study(p: dict[str, Any]) -> ExploitationTable:
    rows, cols = p["rows"], p["cols"]
    graph = g.new_grid(rows, cols, g.ActivityRates(p["lam"], p["mu"]))
    solution = _solve(graph)
    table = ExploitationTable("exploitation-grid", ("user", "row", "col", "psi"))
    for user in range(graph.n_users):
        r, c = divmod(user, cols)
        table.rows.append({"user": user, "row": r, "col": c, "psi": solution.psi[user]})
    best = int(np.argmax(solution.psi))
    table.properties.update(argmax=divmod(best, cols), argmin=divmod(int(np.argmin(solution.psi)), cols))
    return table


def _corner_study(p: dict[str, Any]) -> ExploitationTable:
    rows, cols = p["rows"], p["cols"]
    base = g.new_grid(rows, cols, g.ActivityRates(p["lam"], p["mu"]))
    corner = (rows - 1) * cols
    diagonal = (rows - 2) * cols + 1
    center = (rows // 2) * cols + cols // 2
    table = ExploitationTable(
        "exploitation-corner", ("lambda_corner", "psi_corner", "psi_diagonal", "psi_center", "argmax")
    )
    for lam_corner in p["corner_lambdas"]:
        graph = base.with_rates(corner, g.ActivityRates(lam_corner, p["mu"]))
        psi = _solve(graph).psi
        table.rows.append(
            {
                "lambda_corner": lam_corner,
                "psi_corner": psi[corner],
                "psi_diagonal": psi[diagonal],
                "psi_center": psi[center],
                "argmax": int(np.argmax(psi)),
            }
        )
    table.properties.update(corner=corner, diagonal=diagonal, center=center)
    return table


def _tree_study(p: dict[str, Any]) -> ExploitationTable:
    graph = g.new_tree(p["branching"], p["depth"], g.ActivityRates(p["lam"], p["mu"]))
    psi = _solve(graph).psi
    leaves = {u for u in range(graph.n_users) if len(graph.leaders[u]) == 1}
    parents = {graph.leaders[u][0] for u in leaves}
    table = ExploitationTable("exploitation-tree", ("user", "leaf", "parent_of_leaf", "psi"))
    for user in range(graph.n_users):
        table.rows.append(
            {"user": user, "leaf": user in leaves, "parent_of_leaf": user in parents, "psi": psi[user]}
        )
    table.properties.update(argmax=int(np.argmax(psi)), argmin=int(np.argmin(psi)))
    return table


STUDIES: dict[str, Callable[[dict[str, Any]], ExploitationTable]] = {
    "ring_radius": _ring_study,
    "grid_position": _grid_study,
    "corner_activity": _corner_study,
    "tree_position": _tree_study,
}
STUDY_SCENARIOS = {
    "ring_radius": "exploitation-ring",
    "grid_position": "exploitation-grid",
    "corner_activity": "exploitation-corner",
    "tree_position": "exploitation-tree",
}


def run_exploitation(
    study: str,
    params: Optional[dict[str, Any]] = None,
    output_dir: Optional[Union[str, Path]] = None,
) -> ExploitationTable:
    if study not in STUDIES:
        raise ConfigError(f"unknown study {study!r}, expected one of {sorted(STUDIES)}")
    table = STUDIES[study](scenario_params(STUDY_SCENARIOS[study], params))
    log.info("Exploitation study finished", study=study, rows=len(table.rows))
    if output_dir is not None:
        table.write(output_dir)
    return table


def run_scenario(
    scenario: str,
    config: Optional[SimulationConfig] = None,
    workers: int = 1,
    output_dir: Optional[Union[str, Path]] = None,
    params: Optional[dict[str, Any]] = None,
) -> Union[ComparisonReport, ExploitationTable]:
    """Dispatch a scenario id such as ``validation-grid`` to its runner."""
    scenario_params(scenario, params)
    kind, _, variant = scenario.partition("-")
    if kind == "validation":
        return run_validation(variant, params, config, workers, output_dir)
    if kind == "robustness":
        return run_robustness(variant, params, config, workers, output_dir)
    study = {v: k for k, v in STUDY_SCENARIOS.items()}[scenario]
    return run_exploitation(study, params, output_dir)


def scenario_names() -> Iterable[str]:
    return sorted(SCENARIOS)
