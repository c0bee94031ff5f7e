import argparse
import json
import sys
from typing import Any, Callable, Optional, Sequence

import numpy as np
import structlog

from common.cli import ArgumentParser, common_parser
from common.config import load_config
from common.logging import setup_logging, setup_pre_logging
from common.paths import resolve_path
from osp_influence import experiments, report
from osp_influence import graph as g
from osp_influence.errors import (
    ConfigError,
    ConvergenceError,
    ExistenceError,
    GraphValidationError,
)
from osp_influence.simulator import (
    EVICTIONS,
    INTERARRIVAL_ALIASES,
    INTERARRIVALS,
    SELECTIONS,
    SimulationConfig,
    replicate,
    replicate_to_precision,
)
from osp_influence.solver import (
    ExistenceReport,
    build_system,
    check_existence,
    rank,
    solve_direct,
    solve_fixed_point,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DOMAIN = 2
EXIT_THRESHOLD = 3
EXIT_INTERRUPTED = 130

AVERAGE_ROW = "(average)"

DEFAULT_CONFIG: dict[str, Any] = {
    "WALL_SIZE": 10,
    "FEED_SIZE": 20,
    "SELECTION": "random",
    "EVICTION": "random",
    "INTERARRIVAL": "exponential",
    "SCV": 4.0,
    "TOTAL_EVENTS": 300_000,
    "WARMUP_FRACTION": 0.2,
    "BATCHES": 10,
    "SEED": 12345,
    "THREADS": 1,
    "TOL": 1e-12,
    "OUTPUT_DIR": "results",
    "LOG_FILE": None,
}

# argparse destination -> config key
OVERRIDES = {
    "seed": "SEED",
    "threads": "THREADS",
    "log_file": "LOG_FILE",
    "tol": "TOL",
    "wall_size": "WALL_SIZE",
    "feed_size": "FEED_SIZE",
    "selection": "SELECTION",
    "eviction": "EVICTION",
    "interarrival": "INTERARRIVAL",
    "scv": "SCV",
    "events": "TOTAL_EVENTS",
    "warmup": "WARMUP_FRACTION",
    "batches": "BATCHES",
    "output_dir": "OUTPUT_DIR",
}


def _add_simulation_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-K", "--wall-size", dest="wall_size", type=int, default=None)
    parser.add_argument("-M", "--feed-size", dest="feed_size", type=int, default=None)
    parser.add_argument("--selection", choices=SELECTIONS, default=None)
    parser.add_argument("--eviction", choices=EVICTIONS, default=None)
    parser.add_argument(
        "--interarrival", choices=INTERARRIVALS + tuple(INTERARRIVAL_ALIASES), default=None
    )
    parser.add_argument("--scv", type=float, default=None)
    parser.add_argument("--events", type=int, default=None, help="total simulated events")
    parser.add_argument("--warmup", type=float, default=None, help="warm-up fraction")
    parser.add_argument("--batches", type=int, default=None)
    parser.add_argument("--replications", type=int, default=1)
    parser.add_argument(
        "--precision", type=float, default=None,
        help="pool replications until every influence half-width is this fraction of its value",
    )
    parser.add_argument("--max-replications", dest="max_replications", type=int, default=100)


def build_parser() -> ArgumentParser:
    common = common_parser()
    parser = ArgumentParser(
        prog="osp-influence",
        description="Steady-state influence in Wall/Newsfeed social platforms",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[common], help="generate a graph file")
    gen.add_argument("topology", choices=("complete", "grid", "ring", "tree"))
    gen.add_argument("--n", type=int, default=10)
    gen.add_argument("--rows", type=int, default=20)
    gen.add_argument("--cols", type=int, default=20)
    gen.add_argument("--radius", type=int, default=1)
    gen.add_argument(
        "--random-radii", dest="random_radii", action="store_true",
        help="draw each ring radius uniformly from 1..(n-1)//2",
    )
    gen.add_argument(
        "--random-rates", dest="random_rates", nargs=2, type=float, metavar=("LOW", "HIGH"),
        default=None, help="draw lambda and mu uniformly from [LOW, HIGH]",
    )
    gen.add_argument("--lambda", dest="lam", type=float, default=1.0)
    gen.add_argument("--mu", type=float, default=1.0)
    gen.add_argument("--branching", type=int, default=3)
    gen.add_argument("--depth", type=int, default=3)
    gen.set_defaults(handler=cmd_gen)

    solve = sub.add_parser("solve", parents=[common], help="solve the model")
    solve.add_argument("graph")
    solve.add_argument("--method", choices=("direct", "fixed-point"), default="direct")
    solve.add_argument("--tol", type=float, default=None)
    solve.add_argument("--max-iter", dest="max_iter", type=int, default=None)
    solve.add_argument("--force", action="store_true", help="solve even if not provably solvable")
    solve.set_defaults(handler=cmd_solve)

    simulate = sub.add_parser("simulate", parents=[common], help="simulate the platform")
    simulate.add_argument("graph")
    _add_simulation_args(simulate)
    simulate.set_defaults(handler=cmd_simulate)

    validate = sub.add_parser("validate", parents=[common], help="model against simulation")
    validate.add_argument("graph")
    _add_simulation_args(validate)
    validate.add_argument("--max-rel", dest="max_rel", type=float, default=0.02)
    validate.add_argument("--max-abs", dest="max_abs", type=float, default=0.005)
    validate.add_argument(
        "--per-user", dest="per_user", action="store_true",
        help="apply the thresholds to every user, not only to the average influence",
    )
    validate.set_defaults(handler=cmd_validate)

    ranking = sub.add_parser("rank", parents=[common], help="users by decreasing influence")
    ranking.add_argument("graph")
    ranking.add_argument("--top", type=int, default=None)
    ranking.set_defaults(handler=cmd_rank)

    experiment = sub.add_parser("experiment", parents=[common], help="run a scenario")
    experiment.add_argument("scenario", choices=tuple(experiments.scenario_names()))
    experiment.add_argument("--output-dir", dest="output_dir", default=None)
    experiment.add_argument("--workers", type=int, default=None)
    _add_simulation_args(experiment)
    experiment.set_defaults(handler=cmd_experiment)
    return parser


def effective_config(args: argparse.Namespace, config: dict[str, Any]) -> dict[str, Any]:
    """Config file values overridden by the flags given on the command line."""
    merged = dict(config)
    for dest, key in OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is not None:
            merged[key] = value
    return merged


def _emit(content: str, out: Optional[str]) -> None:
    if out:
        path = report.write_text(content, out)
        structlog.get_logger().info("Output written", path=str(path))
    else:
        sys.stdout.write(content)


def _print_existence(existence: ExistenceReport) -> None:
    status = "converged" if existence.rho_converged else "upper bound"
    lines = [
        f"rho(A) estimate: {report.fmt(existence.rho_estimate)} ({status})",
        f"cs1 (every user self-posts): {'yes' if existence.cs1 else 'no'}",
        f"cs2: {existence.cs2_witness or 'no'}",
        f"solvable: {'yes' if existence.solvable else 'no'}",
    ]
    print("\n".join(lines), file=sys.stderr)


def cmd_gen(args: argparse.Namespace, config: dict[str, Any]) -> int:
    rng = np.random.default_rng(config["SEED"])
    n_users = {
        "complete": args.n,
        "grid": args.rows * args.cols,
        "ring": args.n,
        "tree": sum(args.branching**d for d in range(args.depth + 1)),
    }[args.topology]
    if args.random_rates:
        low, high = args.random_rates
        if not 0 <= low <= high:
            raise ConfigError(f"random rate range must satisfy 0 <= LOW <= HIGH, got {low}, {high}")
        rates: g.RatesArg = g.random_rates(n_users, low, high, rng)
    else:
        rates = g.ActivityRates(args.lam, args.mu)

    if args.topology == "complete":
        graph = g.new_complete(args.n, rates)
    elif args.topology == "grid":
        graph = g.new_grid(args.rows, args.cols, rates)
    elif args.topology == "ring":
        radius: Any = args.radius
        if args.random_radii:
            max_radius = (args.n - 1) // 2
            if max_radius < 1:
                raise ConfigError(f"ring needs at least 3 users, got {args.n}")
            radius = [int(r) for r in rng.integers(1, max_radius + 1, size=args.n)]
        graph = g.new_ring(args.n, radius, rates)
    else:
        graph = g.new_tree(args.branching, args.depth, rates)

    _emit(json.dumps(g.to_dict(graph), indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def cmd_solve(args: argparse.Namespace, config: dict[str, Any]) -> int:
    log = structlog.get_logger()
    graph = g.from_file(args.graph)
    system = build_system(graph)
    existence = check_existence(graph, system)
    _print_existence(existence)
    if not existence.solvable and not args.force:
        print(f"not solvable: rho(A)={report.fmt(existence.rho_estimate)}", file=sys.stderr)
        log.error("System not solvable", rho_estimate=existence.rho_estimate)
        return EXIT_DOMAIN

    threads = int(config["THREADS"])
    if args.method == "direct":
        solution = solve_direct(system, threads=threads)
    else:
        solution = solve_fixed_point(
            system, tol=float(config["TOL"]), max_iter=args.max_iter, threads=threads
        )

    ranking = rank(solution.psi)
    if args.format == "json":
        _emit(report.solution_to_json(solution, report.ranking_rows(ranking, graph.ids)), args.out)
    else:
        blocks = (report.solution_to_csv(solution, graph.ids), report.ranking_to_csv(ranking, graph.ids))
        _emit("\n".join(blocks), args.out)
    if args.out:
        sys.stdout.write(report.ranking_to_csv(ranking, graph.ids))
    return EXIT_OK


def _simulate(
    args: argparse.Namespace, config: dict[str, Any], graph: g.LeaderGraph
) -> Any:
    sim_config = SimulationConfig.from_mapping(config)
    workers = int(config["THREADS"])
    if args.precision is not None:
        return replicate_to_precision(
            graph,
            sim_config,
            args.precision,
            args.max_replications,
            min_replications=max(2, args.replications),
            workers=workers,
        )
    if args.replications < 1:
        raise ConfigError(f"need at least one replication, got {args.replications}")
    return replicate(graph, sim_config, args.replications, workers=workers)


def cmd_simulate(args: argparse.Namespace, config: dict[str, Any]) -> int:
    graph = g.from_file(args.graph)
    estimate = _simulate(args, config, graph)
    if args.format == "json":
        _emit(report.estimate_to_json(estimate), args.out)
    else:
        _emit(report.estimate_to_csv(estimate, graph.ids), args.out)
    return EXIT_OK


def cmd_validate(args: argparse.Namespace, config: dict[str, Any]) -> int:
    """
    Model against simulation for the average influence and for every user.
    The thresholds apply to the average unless ``--per-user`` is given.
    """
    log = structlog.get_logger()
    graph = g.from_file(args.graph)
    model = solve_direct(build_system(graph), threads=int(config["THREADS"]))
    estimate = _simulate(args, config, graph)

    average = experiments.compare_psi("average", [(AVERAGE_ROW, None)], model, estimate)
    users = experiments.compare_psi(
        "users", [(graph.ids[u], u) for u in range(graph.n_users)], model, estimate
    )
    comparison = experiments.ComparisonReport("validate", average + users)

    if args.format == "json":
        _emit(report.to_json(comparison.summary()), args.out)
    else:
        columns = ("user", "model", "simulated", "half_width", "absolute_error", "relative_error")
        rows = [
            {
                "user": p.key,
                "model": p.model,
                "simulated": p.simulated,
                "half_width": p.half_width,
                "absolute_error": p.absolute_error,
                "relative_error": p.relative_error,
            }
            for p in comparison.points
        ]
        _emit(report.table_to_csv(columns, rows), args.out)

    average_report = experiments.ComparisonReport("average", average)
    per_user = experiments.ComparisonReport("users", users)
    print(
        f"average relative error: {report.fmt(average_report.max_relative_error)}\n"
        f"max relative error: {report.fmt(per_user.max_relative_error)}\n"
        f"max absolute error: {report.fmt(per_user.max_absolute_error)}",
        file=sys.stderr,
    )
    gated = comparison if args.per_user else average_report
    max_rel, max_abs = gated.max_relative_error, gated.max_absolute_error
    if max_rel > args.max_rel or max_abs > args.max_abs:
        log.error(
            "Validation thresholds exceeded",
            max_relative_error=max_rel,
            max_absolute_error=max_abs,
            max_rel=args.max_rel,
            max_abs=args.max_abs,
            per_user=args.per_user,
        )
        return EXIT_THRESHOLD
    return EXIT_OK


def cmd_rank(args: argparse.Namespace, config: dict[str, Any]) -> int:
    graph = g.from_file(args.graph)
    solution = solve_direct(build_system(graph), threads=int(config["THREADS"]))
    ranking = rank(solution.psi)
    if args.top is not None:
        if args.top < 1:
            raise ConfigError(f"--top must be >= 1, got {args.top}")
        ranking = ranking[: args.top]
    if args.format == "json":
        _emit(report.to_json({"ranking": report.ranking_rows(ranking, graph.ids)}), args.out)
    else:
        _emit(report.ranking_to_csv(ranking, graph.ids), args.out)
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace, config: dict[str, Any]) -> int:
    sim_config = SimulationConfig.from_mapping(config)
    workers = int(args.workers if args.workers is not None else config["THREADS"])
    output_dir = resolve_path(config["OUTPUT_DIR"])
    params: Optional[dict[str, Any]] = None
    if args.precision is not None:
        params = {"rel_precision": args.precision, "max_replications": args.max_replications}
    result = experiments.run_scenario(
        args.scenario, config=sim_config, workers=workers, output_dir=output_dir, params=params
    )
    if isinstance(result, experiments.ComparisonReport):
        summary = result.summary()
    else:
        summary = {"study": result.study, "properties": result.properties}
    _emit(report.to_json(summary), args.out)
    return EXIT_OK


def run(argv: Optional[Sequence[str]] = None) -> int:
    setup_pre_logging()
    log = structlog.get_logger()
    log.info("Startup log initialized")

    args = build_parser().parse_args(argv)

    try:
        config = load_config(default_config=DEFAULT_CONFIG, config_path=args.config)
    except (FileNotFoundError, ValueError) as e:
        log.error("Config error", error=str(e))
        return EXIT_USAGE
    config = effective_config(args, config)

    try:
        setup_logging(config.get("LOG_FILE"))
        log = structlog.get_logger()
    except OSError as e:
        log.error("Logger reconfiguration error", error=str(e))
        return EXIT_USAGE

    options = {k: v for k, v in vars(args).items() if k != "handler"}
    print(json.dumps({"config": config, "args": options}, sort_keys=True, default=str), file=sys.stderr)

    handler: Callable[[argparse.Namespace, dict[str, Any]], int] = args.handler
    try:
        return handler(args, config)
    except KeyboardInterrupt:
        log.error("Execution interrupted by user")
        return EXIT_INTERRUPTED
    except (GraphValidationError, ExistenceError, ConvergenceError) as e:
        log.error("Domain error", command=args.command, error=str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    except (ConfigError, OSError) as e:
        log.error("Usage error", command=args.command, error=str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        log.exception("Unexpected error", error=str(e))
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
