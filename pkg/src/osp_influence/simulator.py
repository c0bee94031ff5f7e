"""
Discrete-event simulation of the Wall/Newsfeed platform.

Every user runs two renewal streams, self-posts and re-posts. A post placed on
a Wall is copied at the same instant into the Newsfeed of every follower. Lists
never change size: each insertion evicts one entry. Wall and Newsfeed
compositions are integrated over simulated time after the warm-up, in batches,
to give time-averaged label fractions with batch-means confidence intervals.

Nothing here assumes Poisson streams or random policies; those are just the
defaults of ``SimulationConfig``.
"""

import heapq
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Literal, Mapping, Optional, Protocol, Sequence

import numpy as np
import structlog

from osp_influence.errors import ConfigError
from osp_influence.graph import LeaderGraph, validate
from osp_influence.solver import psi
from osp_influence.stats import batch_bounds, confidence_interval

log = structlog.get_logger()

Selection = Literal["random", "newest", "most_popular", "least_popular"]
Eviction = Literal["random", "oldest"]

SELECTIONS: tuple[str, ...] = ("random", "newest", "most_popular", "least_popular")
EVICTIONS: tuple[str, ...] = ("random", "oldest")
INTERARRIVALS: tuple[str, ...] = ("exponential", "hyperexponential", "deterministic")
INTERARRIVAL_ALIASES = {"exp": "exponential", "hyperexp": "hyperexponential", "det": "deterministic"}

SELF_POST = 0
RE_POST = 1
RANDOM_BLOCK = 1 << 16


class RandomSource(Protocol):
    """The part of ``numpy.random.Generator`` the per-event code draws from."""

    def random(self) -> Any: ...

    def integers(self, high: int, /) -> Any: ...

    def exponential(self, scale: float, /) -> Any: ...


class BufferedRandom:
    """Scalar draws served from blocks of uniforms of one numpy Generator."""

    def __init__(self, rng: np.random.Generator, block: int = RANDOM_BLOCK) -> None:
        self._rng = rng
        self._block = block
        self._buffer: list[float] = []
        self._pos = 0

    def random(self) -> float:
        if self._pos == len(self._buffer):
            self._buffer = self._rng.random(self._block).tolist()
            self._pos = 0
        u = self._buffer[self._pos]
        self._pos += 1
        return u

    def integers(self, high: int, /) -> int:
        return min(int(self.random() * high), high - 1)

    def exponential(self, scale: float, /) -> float:
        return -scale * math.log(1.0 - self.random())


@dataclass(frozen=True)
class Interarrival:
    kind: str = "exponential"
    scv: float = 1.0

    def __post_init__(self) -> None:
        kind = INTERARRIVAL_ALIASES.get(self.kind, self.kind)
        if kind not in INTERARRIVALS:
            raise ConfigError(
                f"unknown inter-arrival distribution {self.kind!r}, expected one of {INTERARRIVALS}"
            )
        object.__setattr__(self, "kind", kind)
        if kind == "hyperexponential" and not self.scv > 1:
            raise ConfigError(f"hyperexponential needs scv > 1, got {self.scv}")


@dataclass(frozen=True)
class SimulationConfig:
    wall_size: int = 10
    feed_size: int = 20
    selection: Selection = "random"
    eviction: Eviction = "random"
    interarrival: Interarrival = field(default_factory=Interarrival)
    total_events: int = 300_000
    warmup_fraction: float = 0.2
    seed: int = 12345
    batches: int = 10

    def __post_init__(self) -> None:
        if self.wall_size < 1 or self.feed_size < 1:
            raise ConfigError(
                f"list sizes must be >= 1, got K={self.wall_size}, M={self.feed_size}"
            )
        if self.selection not in SELECTIONS:
            raise ConfigError(f"unknown selection policy {self.selection!r}, expected one of {SELECTIONS}")
        if self.eviction not in EVICTIONS:
            raise ConfigError(f"unknown eviction policy {self.eviction!r}, expected one of {EVICTIONS}")
        if not 0 <= self.warmup_fraction < 1:
            raise ConfigError(f"warmup_fraction must be in [0, 1), got {self.warmup_fraction}")
        if self.batches < 2:
            raise ConfigError(f"need at least 2 batches, got {self.batches}")
        if self.total_events <= 0 or self.measured_events < self.batches:
            raise ConfigError(
                f"{self.total_events} events leave fewer measured events than {self.batches} batches"
            )

    @property
    def warmup_events(self) -> int:
        return int(self.total_events * self.warmup_fraction)

    @property
    def measured_events(self) -> int:
        return self.total_events - self.warmup_events

    @classmethod
    def from_mapping(cls, config: Mapping[str, Any]) -> "SimulationConfig":
        """Build from the upper-case keys used in the YAML config files."""
        defaults = cls()
        return cls(
            wall_size=int(config.get("WALL_SIZE", defaults.wall_size)),
            feed_size=int(config.get("FEED_SIZE", defaults.feed_size)),
            selection=config.get("SELECTION", defaults.selection),
            eviction=config.get("EVICTION", defaults.eviction),
            interarrival=_interarrival_from(config),
            total_events=int(config.get("TOTAL_EVENTS", defaults.total_events)),
            warmup_fraction=float(config.get("WARMUP_FRACTION", defaults.warmup_fraction)),
            seed=int(config.get("SEED", defaults.seed)),
            batches=int(config.get("BATCHES", defaults.batches)),
        )

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _interarrival_from(config: Mapping[str, Any]) -> Interarrival:
    kind = str(config.get("INTERARRIVAL", "exponential"))
    if INTERARRIVAL_ALIASES.get(kind, kind) == "hyperexponential":
        return Interarrival(kind, float(config.get("SCV", 4.0)))
    return Interarrival(kind)


@dataclass(slots=True)
class Lineage:
    """Shared by every copy of one original post; re-posts of any copy count here."""

    origin: int
    repost_count: int = 0


@dataclass(frozen=True, slots=True)
class Post:
    lineage: Lineage
    created_at: float

    @property
    def origin(self) -> int:
        return self.lineage.origin

    @property
    def repost_count(self) -> int:
        return self.lineage.repost_count


@dataclass(frozen=True)
class SimEstimate:
    Q_hat: np.ndarray
    P_hat: np.ndarray
    half_width: np.ndarray
    P_half_width: np.ndarray
    psi_hat: np.ndarray
    psi_half_width: np.ndarray
    elapsed: float
    self_post_rate: np.ndarray
    wall_arrival_rate: np.ndarray
    feed_arrival_rate: np.ndarray
    n_samples: int
    config: SimulationConfig


def sample_interarrival(dist: Interarrival, rate: float, rng: RandomSource) -> float:
    if not rate > 0 or not math.isfinite(rate):
        raise ConfigError(f"rate must be positive and finite, got {rate}")
    if dist.kind == "deterministic":
        return 1.0 / rate
    if dist.kind == "exponential":
        return float(rng.exponential(1.0 / rate))
    # balanced-means two-phase hyperexponential with the requested scv
    p1 = 0.5 * (1.0 + math.sqrt((dist.scv - 1.0) / (dist.scv + 1.0)))
    p = p1 if rng.random() < p1 else 1.0 - p1
    return float(rng.exponential(1.0 / (2.0 * p * rate)))


def _pick(candidates: list[int], rng: RandomSource) -> int:
    if len(candidates) == 1:
        return candidates[0]
    return candidates[int(rng.integers(len(candidates)))]


def select_post(feed: Sequence[Post], policy: str, rng: RandomSource) -> Post:
    """Entry of a Newsfeed to re-post. The entry stays in the Newsfeed."""
    if policy == "random":
        return feed[int(rng.integers(len(feed)))]
    if policy == "newest":
        newest = max(p.created_at for p in feed)
        return feed[_pick([s for s, p in enumerate(feed) if p.created_at == newest], rng)]

    sign = 1 if policy == "most_popular" else -1
    best = max((sign * p.repost_count, p.created_at) for p in feed)
    slots = [s for s, p in enumerate(feed) if (sign * p.repost_count, p.created_at) == best]
    return feed[_pick(slots, rng)]


def evict_slot(posts: Sequence[Post], policy: str, rng: RandomSource) -> int:
    if policy == "random":
        return int(rng.integers(len(posts)))
    return min(range(len(posts)), key=lambda s: posts[s].created_at)


class _Composition:
    """
    Per-user label counts of one kind of list, integrated over time while measuring.
    Each (user, label) entry keeps the time of its last change, so a swap only
    touches the two labels involved.
    """

    def __init__(self, n_users: int, size: int) -> None:
        self.size = size
        self.counts = [[0] * n_users for _ in range(n_users)]
        self._area = [[0.0] * n_users for _ in range(n_users)]
        self._since = [[0.0] * n_users for _ in range(n_users)]
        self.measuring = False

    def swap(self, user: int, old_label: int, new_label: int, now: float) -> None:
        if old_label == new_label:
            return
        counts = self.counts[user]
        if self.measuring:
            area, since = self._area[user], self._since[user]
            area[old_label] += (now - since[old_label]) * counts[old_label]
            area[new_label] += (now - since[new_label]) * counts[new_label]
            since[old_label] = since[new_label] = now
        counts[old_label] -= 1
        counts[new_label] += 1

    def flush(self, now: float) -> np.ndarray:
        """Close the running integrals at ``now``; return and reset the accumulated area."""
        area = np.array(self._area)
        if self.measuring:
            area += (now - np.array(self._since)) * np.array(self.counts)
        n = len(self.counts)
        self._area = [[0.0] * n for _ in range(n)]
        self._since = [[now] * n for _ in range(n)]
        self.measuring = True
        return area

    def fractions(self, area: np.ndarray, duration: float) -> np.ndarray:
        """label x user matrix of time-averaged fractions."""
        return (area / (self.size * duration)).T


def _initial_lists(
    graph: LeaderGraph, config: SimulationConfig, rng: np.random.Generator
) -> tuple[list[list[Post]], list[list[Post]]]:
    walls = [
        [Post(Lineage(n), 0.0) for _ in range(config.wall_size)] for n in range(graph.n_users)
    ]
    feeds = []
    for n, ls in enumerate(graph.leaders):
        labels = rng.choice(np.asarray(ls), size=config.feed_size)
        feeds.append([Post(Lineage(int(k)), 0.0) for k in labels])
    return walls, feeds


def run(graph: LeaderGraph, config: SimulationConfig) -> SimEstimate:
    validate(graph).raise_for_violations()
    rng = np.random.default_rng(config.seed)
    n = graph.n_users
    rates = ((graph.lambdas.tolist(), SELF_POST), (graph.mus.tolist(), RE_POST))
    followers = graph.followers

    walls, feeds = _initial_lists(graph, config, rng)
    wall_mix = _Composition(n, config.wall_size)
    feed_mix = _Composition(n, config.feed_size)
    for user in range(n):
        wall_mix.counts[user][user] = config.wall_size
        for post in feeds[user]:
            feed_mix.counts[user][post.origin] += 1

    draws = BufferedRandom(rng)

    events: list[tuple[float, int, int]] = []
    for stream_rates, kind in rates:
        for user in range(n):
            rate = stream_rates[user]
            if rate > 0:
                first = draws.random() * sample_interarrival(config.interarrival, rate, draws)
                events.append((first, user, kind))
    heapq.heapify(events)

    boundaries = {config.warmup_events + b for b in batch_bounds(config.measured_events, config.batches)}
    self_posts, wall_arrivals, feed_arrivals = [0] * n, [0] * n, [0] * n
    wall_batches, feed_batches, durations = [], [], []
    started_at = batch_start = 0.0
    now = 0.0

    for index in range(config.total_events):
        now, user, kind = heapq.heappop(events)

        if index in boundaries:
            wall_area, feed_area = wall_mix.flush(now), feed_mix.flush(now)
            if index == config.warmup_events:
                started_at = now
                for counter in (self_posts, wall_arrivals, feed_arrivals):
                    counter[:] = [0] * n
            else:
                wall_batches.append(wall_area)
                feed_batches.append(feed_area)
                durations.append(now - batch_start)
                log.debug("Batch closed", batch=len(durations), time=now)
            batch_start = now

        if kind == SELF_POST:
            post = Post(Lineage(user), now)
            self_posts[user] += 1
        else:
            selected = select_post(feeds[user], config.selection, draws)
            selected.lineage.repost_count += 1
            post = Post(selected.lineage, now)

        label = post.origin
        wall = walls[user]
        slot = evict_slot(wall, config.eviction, draws)
        wall_mix.swap(user, wall[slot].origin, label, now)
        wall[slot] = post
        wall_arrivals[user] += 1

        for follower in followers[user]:
            feed = feeds[follower]
            slot = evict_slot(feed, config.eviction, draws)
            feed_mix.swap(follower, feed[slot].origin, label, now)
            feed[slot] = post
            feed_arrivals[follower] += 1

        rate = rates[kind][0][user]
        heapq.heappush(
            events, (now + sample_interarrival(config.interarrival, rate, draws), user, kind)
        )

    wall_batches.append(wall_mix.flush(now))
    feed_batches.append(feed_mix.flush(now))
    durations.append(now - batch_start)
    counters = (
        np.array(self_posts, dtype=float),
        np.array(wall_arrivals, dtype=float),
        np.array(feed_arrivals, dtype=float),
    )
    return _estimate(
        wall_mix, feed_mix, wall_batches, feed_batches, durations, now - started_at, counters, config
    )


def _estimate(
    wall_mix: _Composition,
    feed_mix: _Composition,
    wall_batches: list[np.ndarray],
    feed_batches: list[np.ndarray],
    durations: list[float],
    elapsed: float,
    counters: tuple[np.ndarray, np.ndarray, np.ndarray],
    config: SimulationConfig,
) -> SimEstimate:
    if elapsed <= 0 or min(durations) <= 0:
        raise ConfigError("simulated time did not advance within a batch, raise total_events")

    q_batches = np.stack([wall_mix.fractions(a, d) for a, d in zip(wall_batches, durations)])
    p_batches = np.stack([feed_mix.fractions(a, d) for a, d in zip(feed_batches, durations)])
    _, q_half = confidence_interval(q_batches)
    _, p_half = confidence_interval(p_batches)
    _, psi_half = confidence_interval(np.stack([psi(q) for q in q_batches]))

    Q_hat = wall_mix.fractions(sum(wall_batches), elapsed)
    P_hat = feed_mix.fractions(sum(feed_batches), elapsed)
    self_posts, wall_arrivals, feed_arrivals = counters
    log.info(
        "Simulation finished",
        n_users=Q_hat.shape[0],
        events=config.total_events,
        elapsed=elapsed,
        seed=config.seed,
    )
    return SimEstimate(
        Q_hat=Q_hat,
        P_hat=P_hat,
        half_width=q_half,
        P_half_width=p_half,
        psi_hat=psi(Q_hat),
        psi_half_width=psi_half,
        elapsed=elapsed,
        self_post_rate=self_posts / elapsed,
        wall_arrival_rate=wall_arrivals / elapsed,
        feed_arrival_rate=feed_arrivals / elapsed,
        n_samples=len(durations),
        config=config,
    )


def merge(estimates: Sequence[SimEstimate]) -> SimEstimate:
    """Pool independent replications: means, and Student-t half-widths across them."""
    if not estimates:
        raise ValueError("nothing to merge")
    runs = sorted(estimates, key=lambda e: e.config.seed)
    if len(runs) == 1:
        return runs[0]

    def pooled(attr: str) -> tuple[np.ndarray, np.ndarray]:
        return confidence_interval(np.stack([getattr(e, attr) for e in runs]))

    Q_hat, q_half = pooled("Q_hat")
    P_hat, p_half = pooled("P_hat")
    _, psi_half = pooled("psi_hat")
    return SimEstimate(
        Q_hat=Q_hat,
        P_hat=P_hat,
        half_width=q_half,
        P_half_width=p_half,
        psi_hat=psi(Q_hat),
        psi_half_width=psi_half,
        elapsed=float(np.mean([e.elapsed for e in runs])),
        self_post_rate=pooled("self_post_rate")[0],
        wall_arrival_rate=pooled("wall_arrival_rate")[0],
        feed_arrival_rate=pooled("feed_arrival_rate")[0],
        n_samples=len(runs),
        config=runs[0].config,
    )


def replicate(
    graph: LeaderGraph,
    config: SimulationConfig,
    n_replications: int,
    workers: int = 1,
    executor: Optional[ProcessPoolExecutor] = None,
) -> SimEstimate:
    """Independent runs with seeds seed, seed + 1, ...; one replication is just ``run``."""
    if n_replications < 1:
        raise ConfigError(f"need at least one replication, got {n_replications}")
    configs = [replace(config, seed=config.seed + r) for r in range(n_replications)]
    if n_replications == 1:
        return run(graph, configs[0])

    if workers > 1 or executor is not None:
        pool = executor or ProcessPoolExecutor(max_workers=workers)
        try:
            results = list(pool.map(run, [graph] * n_replications, configs))
        finally:
            if executor is None:
                pool.shutdown()
    else:
        results = [run(graph, c) for c in configs]
    log.info("Replications pooled", replications=n_replications, seed=config.seed)
    return merge(results)


def influence(estimate: SimEstimate) -> np.ndarray:
    return estimate.psi_hat


def relative_half_width(
    runs: Sequence[SimEstimate], statistic: Callable[[SimEstimate], np.ndarray] = influence
) -> float:
    """Worst ratio of replication half-width to mean over the positive entries of ``statistic``."""
    mean, half = confidence_interval(np.stack([np.atleast_1d(statistic(r)) for r in runs]))
    positive = mean > 0
    if not positive.any():
        return 0.0
    return float(np.max(half[positive] / mean[positive]))


def replicate_to_precision(
    graph: LeaderGraph,
    config: SimulationConfig,
    rel_precision: float,
    max_replications: int,
    min_replications: int = 2,
    workers: int = 1,
    statistic: Callable[[SimEstimate], np.ndarray] = influence,
) -> SimEstimate:
    """
    Pool replications with seeds seed, seed + 1, ... until the relative
    half-width of ``statistic`` is at most ``rel_precision``, or
    ``max_replications`` have run.

    Runs go in rounds of ``workers``, but the stopping point is the first
    replication count that meets the target, so the pooled estimate does not
    depend on the number of workers.
    """
    if not rel_precision > 0:
        raise ConfigError(f"relative precision must be positive, got {rel_precision}")
    if not 2 <= min_replications <= max_replications:
        raise ConfigError(
            f"need 2 <= min_replications <= max_replications, got {min_replications}, {max_replications}"
        )
    runs: list[SimEstimate] = []
    checked = min_replications - 1
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        while len(runs) < max_replications:
            size = min(max(workers, min_replications - len(runs), 1), max_replications - len(runs))
            configs = [replace(config, seed=config.seed + len(runs) + r) for r in range(size)]
            if pool is not None:
                runs.extend(pool.map(run, [graph] * size, configs))
            else:
                runs.extend(run(graph, c) for c in configs)
            for count in range(checked + 1, len(runs) + 1):
                achieved = relative_half_width(runs[:count], statistic)
                if achieved <= rel_precision:
                    log.info(
                        "Replications reached precision",
                        replications=count,
                        relative_half_width=achieved,
                        target=rel_precision,
                    )
                    return merge(runs[:count])
            checked = len(runs)
            log.info("Replication round pooled", replications=checked, relative_half_width=achieved)
    finally:
        if pool is not None:
            pool.shutdown()
    log.warning(
        "Replication budget exhausted before reaching precision",
        replications=len(runs),
        relative_half_width=relative_half_width(runs, statistic),
        target=rel_precision,
    )
    return merge(runs)
