"""
Closed-form steady state of the Wall/Newsfeed model.

For every label i the Newsfeed vector solves p_i = A p_i + b_i and the Wall
vector follows as q_i = C p_i + d_i. A, C do not depend on i, so (I - A) is
factorized once and applied to all N right-hand sides.

Orientation: ``SolutionSet.P[i, n]`` is the probability that a post in the
Newsfeed of user n has origin i (labels on rows, users on columns). Internally
the solves work on the transposed (users x labels) arrays, one column per label.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import networkx as nx
import numpy as np
import scipy.sparse as sp
import structlog
from scipy.sparse.linalg import splu

from osp_influence.errors import ConvergenceError, ExistenceError
from osp_influence.graph import LeaderGraph, validate

log = structlog.get_logger()

DEFAULT_TOL = 1e-12
RHO_TOL = 1e-10
RHO_MAX_ITER = 10_000
STOCHASTIC_TOL = 1e-6


@dataclass(frozen=True)
class PropagationSystem:
    """
    A: propagation matrix, a[j, k] = mu_k / S_j for k leader of j (S_j = leaders' total rate).
    B: column i is b_i, B[j, i] = lambda_i / S_j for i leader of j.
    c: diagonal of C, mu_j / (lambda_j + mu_j).
    d: d[i] is the single non-zero entry of d_i, lambda_i / (lambda_i + mu_i).
    """

    A: sp.csr_matrix
    B: sp.csc_matrix
    c: np.ndarray
    d: np.ndarray

    @property
    def n_users(self) -> int:
        return int(self.A.shape[0])

    @property
    def C(self) -> sp.dia_matrix:
        return sp.diags(self.c)

    def b(self, label: int) -> np.ndarray:
        return self.B[:, label].toarray().ravel()

    def d_vector(self, label: int) -> np.ndarray:
        out = np.zeros(self.n_users)
        out[label] = self.d[label]
        return out


@dataclass(frozen=True)
class ExistenceReport:
    rho_estimate: float
    rho_converged: bool
    cs1: bool
    cs2_witness: Optional[str]
    solvable: bool


@dataclass(frozen=True)
class SolutionSet:
    P: np.ndarray
    Q: np.ndarray
    psi: np.ndarray
    method: str = "direct"
    iterations: int = 0

    @property
    def n_users(self) -> int:
        return int(self.P.shape[0])


def build_system(graph: LeaderGraph) -> PropagationSystem:
    validate(graph).raise_for_violations()
    n = graph.n_users
    lam, mu = graph.lambdas, graph.mus
    total = lam + mu

    rows = np.repeat(np.arange(n), [len(ls) for ls in graph.leaders])
    cols = np.fromiter((k for ls in graph.leaders for k in ls), dtype=int, count=len(rows))
    feed_rate = np.bincount(rows, weights=total[cols], minlength=n)

    A = sp.csr_matrix((mu[cols] / feed_rate[rows], (rows, cols)), shape=(n, n))
    A.eliminate_zeros()
    B = sp.csc_matrix((lam[cols] / feed_rate[rows], (rows, cols)), shape=(n, n))
    B.eliminate_zeros()

    system = PropagationSystem(A=A, B=B, c=mu / total, d=lam / total)
    log.info("Propagation system assembled", n_users=n, nnz_a=A.nnz, nnz_b=B.nnz)
    return system


def _irreducible_radius(
    A: sp.csr_matrix, tol: float, max_iter: int, seed: int
) -> tuple[float, bool]:
    """
    Bound rho(A) from both sides with min/max of (Ax)_j / x_j over a positive x,
    refining x by power iteration on (I + A) / 2, which has the same Perron
    vector but no periodic eigenvalues on the spectral circle.
    Returns (estimate, converged); without convergence the upper bound is returned.
    """
    row_sums = np.asarray(A.sum(axis=1)).ravel()
    low, high = float(row_sums.min()), float(row_sums.max())
    if high - low <= tol:
        return high, True

    rng = np.random.default_rng(seed)
    x = rng.uniform(0.5, 1.5, size=A.shape[0])
    upper = high
    for _ in range(max_iter):
        y = A @ x
        ratios = y / x
        lower_cw, upper_cw = float(ratios.min()), float(ratios.max())
        low, upper = max(low, lower_cw), min(high, upper_cw)
        if upper - low < tol:
            return float(np.clip((low + upper) / 2, low, upper)), True
        x = x + y
        x /= x.max()
    return upper, False


def _collatz_wielandt(
    A: sp.spmatrix, tol: float, max_iter: int, seed: int
) -> tuple[float, bool]:
    """
    rho(A) is the largest radius over the strongly connected components of the
    support of A; components without a cycle contribute 0. Each remaining block
    is irreducible, so its Collatz-Wielandt bounds close in on the radius.
    """
    A = sp.csr_matrix(A, copy=True)
    A.eliminate_zeros()
    support = nx.from_scipy_sparse_array(A, create_using=nx.DiGraph)
    blocks = [
        sorted(c)
        for c in nx.strongly_connected_components(support)
        if len(c) > 1 or support.has_edge(next(iter(c)), next(iter(c)))
    ]
    if not blocks:
        return 0.0, True
    radii = [_irreducible_radius(A[idx][:, idx], tol, max_iter, seed) for idx in blocks]
    return max(r for r, _ in radii), all(converged for _, converged in radii)


def spectral_radius_estimate(
    A: sp.spmatrix, tol: float = RHO_TOL, max_iter: int = RHO_MAX_ITER, seed: int = 0
) -> float:
    estimate, converged = _collatz_wielandt(A, tol, max_iter, seed)
    if not converged:
        log.warning(
            "Spectral radius estimate did not converge, returning upper bound",
            max_iter=max_iter,
            estimate=estimate,
        )
    return estimate


def check_existence(
    graph: LeaderGraph, system: PropagationSystem, tol: float = RHO_TOL
) -> ExistenceReport:
    cs1 = bool(np.all(graph.lambdas > 0))

    witness = None
    support = nx.from_scipy_sparse_array(system.A, create_using=nx.DiGraph)
    posting = np.flatnonzero(graph.lambdas > 0)
    if posting.size and nx.is_strongly_connected(support):
        witness = f"A irreducible and user {graph.ids[posting[0]]} self-posts"

    rho, converged = _collatz_wielandt(system.A, tol, RHO_MAX_ITER, seed=0)
    solvable = cs1 or witness is not None or rho < 1 - tol
    report = ExistenceReport(
        rho_estimate=rho,
        rho_converged=converged,
        cs1=cs1,
        cs2_witness=witness,
        solvable=solvable,
    )
    log.info(
        "Existence checked",
        rho_estimate=rho,
        rho_converged=converged,
        cs1=cs1,
        cs2=witness is not None,
        solvable=solvable,
    )
    return report


def _column_blocks(n: int, threads: int) -> list[slice]:
    threads = max(1, min(threads, n))
    edges = np.linspace(0, n, threads + 1).astype(int)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _map_blocks[T](func: Callable[[slice], T], n: int, threads: int) -> list[T]:
    blocks = _column_blocks(n, threads)
    if len(blocks) == 1:
        return [func(blocks[0])]
    with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
        return list(pool.map(func, blocks))


def _assemble(
    system: PropagationSystem, feed: np.ndarray, method: str, iterations: int
) -> SolutionSet:
    """feed is users x labels; returns label-major P, Q and the influence vector."""
    wall = system.C @ feed + np.diag(system.d)
    P, Q = feed.T.copy(), wall.T.copy()
    return SolutionSet(P=P, Q=Q, psi=psi(Q), method=method, iterations=iterations)


def _check_stochastic(system: PropagationSystem, feed: np.ndarray) -> None:
    sums = feed.sum(axis=1)
    if not np.all(np.isfinite(feed)) or np.max(np.abs(sums - 1.0)) > STOCHASTIC_TOL:
        raise ExistenceError(
            "Newsfeed probabilities are not stochastic, (I - A) is singular",
            spectral_radius_estimate(system.A),
        )


def solve_direct(system: PropagationSystem, threads: int = 1) -> SolutionSet:
    n = system.n_users
    identity = sp.identity(n, format="csc")
    try:
        lu = splu(sp.csc_matrix(identity - system.A))
    except RuntimeError as e:
        raise ExistenceError(f"(I - A) is singular: {e}", spectral_radius_estimate(system.A))

    rhs = system.B.toarray()

    def back_substitute(block: slice) -> np.ndarray:
        return lu.solve(np.asfortranarray(rhs[:, block]))

    feed = np.hstack(_map_blocks(back_substitute, n, threads))
    _check_stochastic(system, feed)
    log.info("Direct solve finished", n_users=n, threads=threads)
    return _assemble(system, feed, "direct", 0)


def solve_fixed_point(
    system: PropagationSystem,
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
    init: Optional[np.ndarray] = None,
    threads: int = 1,
) -> SolutionSet:
    """
    Iterate p(t) = A p(t-1) + b for every label until the next step would move
    the iterate by less than ``tol`` in max-norm. ``init`` is either one vector
    used for all labels or a label-major matrix such as ``SolutionSet.P``.
    """
    n = system.n_users
    max_iter = 100 * n if max_iter is None else max_iter
    rhs = system.B.toarray()
    if init is None:
        start = np.zeros((n, n))
    else:
        init = np.asarray(init, dtype=float)
        start = np.tile(init[:, None], (1, n)) if init.ndim == 1 else init.T.copy()

    def iterate(block: slice) -> tuple[np.ndarray, int]:
        b = rhs[:, block]
        p = start[:, block]
        ap = system.A @ p
        residual = np.inf
        for it in range(1, max_iter + 1):
            p = ap + b
            ap = system.A @ p
            residual = float(np.max(np.abs(ap + b - p)))
            if residual < tol:
                return p, it
        raise ConvergenceError(max_iter, residual)

    results = _map_blocks(iterate, n, threads)
    feed = np.hstack([p for p, _ in results])
    iterations = max(it for _, it in results)
    _check_stochastic(system, feed)
    log.info("Fixed point solve finished", n_users=n, iterations=iterations, tol=tol)
    return _assemble(system, feed, "fixed-point", iterations)


def psi(Q: np.ndarray) -> np.ndarray:
    """Average presence of label i on the Walls of everybody except i."""
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    if n < 2:
        raise ValueError(f"influence needs at least 2 users, got {n}")
    return (Q.sum(axis=1) - np.diag(Q)) / (n - 1)


def rank(psi_values: np.ndarray) -> list[tuple[int, float]]:
    """Users by decreasing influence, ties by ascending id."""
    order = sorted(range(len(psi_values)), key=lambda u: (-float(psi_values[u]), u))
    return [(u, float(psi_values[u])) for u in order]


def balance_residual(graph: LeaderGraph, solution: SolutionSet) -> float:
    """
    Max residual of the Newsfeed balance equations (scaled by the Newsfeed input
    rate) and of the Wall relations, evaluated straight from the graph rates.
    """
    lam, mu = graph.lambdas, graph.mus
    total = lam + mu
    P, Q = solution.P, solution.Q
    worst = 0.0
    for j, ls in enumerate(graph.leaders):
        idx = list(ls)
        feed_rate = total[idx].sum()
        inflow = P[:, idx] @ mu[idx]
        inflow[idx] += lam[idx]
        worst = max(worst, float(np.max(np.abs(P[:, j] * feed_rate - inflow))) / feed_rate)

        wall = mu[j] / total[j] * P[:, j]
        wall[j] += lam[j] / total[j]
        worst = max(worst, float(np.max(np.abs(Q[:, j] - wall))))
    return worst


def direct_indirect_gap(Q: np.ndarray, graph: LeaderGraph, user: int) -> float:
    """Mean q of ``user`` over its followers minus the mean over everybody else."""
    followers = set(graph.followers[user])
    others = [n for n in range(graph.n_users) if n != user and n not in followers]
    if not followers or not others:
        return float("nan")
    return float(np.mean(Q[user, sorted(followers)]) - np.mean(Q[user, others]))
