"""Communication graphs, consensus weights and distributed centroid tracking.

Each player keeps a local estimate of every class centroid and refreshes it
with exactly one exchange with its graph neighbours per play::

    Qhat(t+1) = W @ (Qhat(t) + X(t+1) - X(t))

where row ``i`` of ``X`` is player i's contribution to the tracked network
average.  With a doubly stochastic ``W`` the column sums of ``Qhat`` always
equal those of ``X``, so the mean of the estimates is the true centroid.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import pdist

from . import congestion as cg
from .errors import GenerationError, InvalidArgument, InvariantViolation
from .learning import (
    LearnerState,
    PartitionSpec,
    _choose_all,
    _values_for_players,
    class_centroids,
    composite_beliefs,
    empirical_update,
    initial_state,
    response_values,
    validate_partition,
)

WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on nodes ``0..n-1``.

    ``edges`` is an ``(E, 2)`` integer array with ``i < j`` in every row,
    sorted lexicographically.
    """

    n: int
    edges: np.ndarray
    coords: np.ndarray | None = None

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=int).reshape(-1, 2)
        if self.n < 1:
            raise InvalidArgument("graph needs at least one node")
        if e.size and (e.min() < 0 or e.max() >= self.n):
            raise InvalidArgument("edge endpoint out of range")
        if np.any(e[:, 0] == e[:, 1]):
            raise InvalidArgument("self-loops are not allowed")
        e = np.sort(e, axis=1)
        e = np.unique(e, axis=0) if e.size else e
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)

    @classmethod
    def complete(cls, n: int) -> "Graph":
        i, j = np.triu_indices(n, k=1)
        return cls(n, np.column_stack([i, j]))

    @classmethod
    def path(cls, n: int) -> "Graph":
        return cls(n, np.column_stack([np.arange(n - 1), np.arange(1, n)]))

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=bool)
        a[self.edges[:, 0], self.edges[:, 1]] = True
        a[self.edges[:, 1], self.edges[:, 0]] = True
        return a

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n)

    @property
    def average_degree(self) -> float:
        return 2.0 * len(self.edges) / self.n

    def is_connected(self) -> bool:
        if self.n == 1:
            return True
        a = coo_matrix((np.ones(len(self.edges)), (self.edges[:, 0], self.edges[:, 1])),
                       shape=(self.n, self.n))
        ncomp, _ = connected_components(a, directed=False)
        return ncomp == 1


def _edges_within(coords: np.ndarray, radius: float) -> np.ndarray:
    n = len(coords)
    if n < 2:
        return np.empty((0, 2), dtype=int)
    d = pdist(coords)
    i, j = np.triu_indices(n, k=1)  # same ordering as pdist
    keep = d <= radius
    return np.column_stack([i[keep], j[keep]])


def geometric_random_graph(n: int, radius: float, seed=None, max_retries: int = 100) -> Graph:
    """Uniform points in the unit square joined when within ``radius``.

    Fresh point sets are drawn until the graph is connected.
    """
    if radius <= 0:
        raise InvalidArgument("radius must be positive")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        coords = rng.random((n, 2))
        g = Graph(n, _edges_within(coords, radius), coords)
        if g.is_connected():
            return g
    raise GenerationError(
        f"no connected geometric graph with n={n}, radius={radius} after {max_retries} attempts")


def geometric_graph_with_degree(n: int, target_degree: float, seed=None,
                                max_retries: int = 100) -> tuple[Graph, float]:
    """Connected geometric graph whose average degree is as close as possible to ``target_degree``.

    For each point set the radius is set between the ``E``-th and ``E+1``-th
    smallest pairwise distances with ``E = round(target_degree * n / 2)``, which
    is where a bisection on the radius would land.  Returns the graph and the
    radius used.
    """
    if target_degree <= 0:
        raise InvalidArgument("target degree must be positive")
    if n == 1:
        return Graph(1, np.empty((0, 2), dtype=int), np.zeros((1, 2))), 1.0
    rng = np.random.default_rng(seed)
    npairs = n * (n - 1) // 2
    want = min(max(int(round(target_degree * n / 2)), 1), npairs)
    for _ in range(max_retries):
        coords = rng.random((n, 2))
        d = np.sort(pdist(coords))
        radius = float(d[want - 1] if want == npairs else 0.5 * (d[want - 1] + d[want]))
        g = Graph(n, _edges_within(coords, radius), coords)
        if g.is_connected():
            return g, radius
    raise GenerationError(
        f"no connected geometric graph with n={n}, average degree {target_degree} "
        f"after {max_retries} attempts")


def metropolis_hastings_weights(g: Graph) -> np.ndarray:
    """``w_ij = 1 / (1 + max(deg_i, deg_j))`` on edges, the remainder on the diagonal."""
    if not g.is_connected():
        raise InvalidArgument("Metropolis-Hastings weights need a connected graph")
    deg = g.degrees()
    w = np.zeros((g.n, g.n))
    i, j = g.edges[:, 0], g.edges[:, 1]
    vals = 1.0 / (1.0 + np.maximum(deg[i], deg[j]))
    w[i, j] = vals
    w[j, i] = vals
    w[np.diag_indices(g.n)] = 1.0 - w.sum(axis=1)
    return w


def uniform_weights(n: int) -> np.ndarray:
    """One-shot averaging matrix ``ones / n`` (a complete graph)."""
    return np.full((n, n), 1.0 / n)


def weight_matrix_violations(w, graph: Graph | None = None, tol: float = WEIGHT_TOL) -> list[str]:
    """Names and details of every weight-matrix invariant that ``w`` breaks."""
    w = np.asarray(w, dtype=float)
    problems = []
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        return [f"shape: weight matrix must be square, got {w.shape}"]
    n = w.shape[0]
    if not np.all(np.isfinite(w)):
        problems.append("finite: weight matrix has non-finite entries")
        return problems
    rows = np.abs(w.sum(axis=1) - 1.0).max()
    if rows > tol:
        problems.append(f"row-stochastic: row sums deviate from 1 by {rows:.3e}")
    cols = np.abs(w.sum(axis=0) - 1.0).max()
    if cols > tol:
        problems.append(f"column-stochastic: column sums deviate from 1 by {cols:.3e}")
    if w.min() < 0:
        problems.append(f"nonnegative: minimum entry {w.min():.3e}")
    if graph is not None:
        if graph.n != n:
            problems.append(f"sparsity: matrix is {n}x{n} but graph has {graph.n} nodes")
        else:
            allowed = graph.adjacency() | np.eye(n, dtype=bool)
            bad = np.argwhere((w != 0) & ~allowed)
            if len(bad):
                i, j = bad[0]
                problems.append(f"sparsity: w[{i},{j}] is nonzero but ({i},{j}) is not an edge")
    if not problems and n > 1 and spectral_contraction(w) >= 1.0 - tol:
        problems.append("mixing: contraction factor is not below 1 (reducible or periodic)")
    return problems


def check_weight_matrix(w, graph: Graph | None = None) -> np.ndarray:
    """Return ``w`` as an array, raising :class:`InvariantViolation` on the first problem."""
    problems = weight_matrix_violations(w, graph)
    if problems:
        name, _, detail = problems[0].partition(": ")
        raise InvariantViolation(f"weight-matrix/{name}", detail)
    return np.asarray(w, dtype=float)


def spectral_contraction(w) -> float:
    """Operator norm of ``W`` restricted to zero-sum vectors.

    For doubly stochastic ``W`` this is the largest singular value of
    ``W - ones/n``.
    """
    w = np.asarray(w, dtype=float)
    n = w.shape[0]
    if w.shape != (n, n):
        raise InvalidArgument("weight matrix must be square")
    # Project onto the zero-sum subspace before applying W.
    proj = np.eye(n) - np.full((n, n), 1.0 / n)
    return float(np.linalg.norm(w @ proj, ord=2))


def consensus_step(estimates, q_new, q_old, w) -> np.ndarray:
    """One tracking round: ``W @ (estimates + q_new - q_old)``."""
    estimates = np.asarray(estimates, dtype=float)
    q_new = np.asarray(q_new, dtype=float)
    q_old = np.asarray(q_old, dtype=float)
    w = np.asarray(w, dtype=float)
    if not (estimates.shape == q_new.shape == q_old.shape):
        raise InvalidArgument("estimate and signal matrices must share a shape")
    if w.shape != (estimates.shape[0], estimates.shape[0]):
        raise InvalidArgument("weight matrix does not match the number of nodes")
    return w @ (estimates + q_new - q_old)


def tracking_error_bound(n: int, lam: float, t: int, scale: float = 1.0) -> float:
    """Ceiling on ``||qhat(t, k) - qbar(t, k) * 1||`` for every action column ``k``.

    ``2 sqrt(n) / (1 - lam) * H_t / t`` where ``H_t`` is the ``t``-th harmonic
    number; ``H_t / t`` is the running mean of the per-play step bound
    ``1 / (tau + 1)``.  ``scale`` multiplies the step bound for signals that
    move faster than an empirical distribution.
    """
    if not 0.0 <= lam < 1.0:
        raise InvalidArgument(f"contraction factor {lam} must lie in [0, 1)")
    if t < 1:
        raise InvalidArgument("t must be at least 1")
    harmonic = math.fsum(1.0 / tau for tau in range(1, t + 1))
    return scale * 2.0 * math.sqrt(n) / (1.0 - lam) * harmonic / t


def class_signals(q, partition: PartitionSpec) -> np.ndarray:
    """``(K, n, m)`` per-node contributions whose network average is each class centroid."""
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    out = np.zeros((partition.num_classes,) + q.shape)
    for k, members in enumerate(partition.classes):
        idx = list(members)
        out[k, idx] = q[idx] * (n / len(idx))
    return out


def init_estimates(state: LearnerState, partition: PartitionSpec, w) -> LearnerState:
    """Attach the first-play estimates: each player averages its neighbours' signals once."""
    w = np.asarray(w, dtype=float)
    signals = class_signals(state.q, partition)
    estimates = np.einsum("ij,kjm->kim", w, signals)
    return replace(state, estimates=estimates)


def estimate_response_values(game, state: LearnerState, partition: PartitionSpec,
                             workers: int = 1) -> np.ndarray:
    """``(n, m)`` payoffs where player ``i`` assumes opponent ``j`` plays ``estimates[psi(j), i]``."""
    est = state.estimates
    if isinstance(game, cg.CongestionGame) and partition.num_classes == 1:
        if state.n == 1:
            return cg.expected_utilities_iid(game, np.zeros((1, game.m)))
        return cg.expected_utilities_iid(game, est[0])
    return _values_for_players(
        game, lambda i: composite_beliefs(est[:, i, :], partition, i), state.n, workers)


def step_distributed(state: LearnerState, game, partition: PartitionSpec, w,
                     tiebreak: str = "lowest", rng: np.random.Generator | None = None,
                     workers: int = 1) -> LearnerState:
    """One play followed by exactly one consensus round per class."""
    if state.estimates is None:
        raise InvalidArgument("state has no estimates; call init_estimates first")
    values = estimate_response_values(game, state, partition, workers)
    actions = _choose_all(values, tiebreak, rng)
    q_new = empirical_update(state.q, actions, state.t)
    old_sig = class_signals(state.q, partition)
    new_sig = class_signals(q_new, partition)
    estimates = np.stack([consensus_step(state.estimates[k], new_sig[k], old_sig[k], w)
                          for k in range(partition.num_classes)])
    return LearnerState(state.t + 1, actions, q_new, class_centroids(q_new, partition), estimates)


def run_distributed(game, partition: PartitionSpec, w, horizon: int, actions0,
                    tiebreak: str = "lowest", rng: np.random.Generator | None = None,
                    workers: int = 1) -> Iterator[LearnerState]:
    """Yield states with estimates at ``t = 1..horizon``."""
    if horizon <= 0:
        return
    validate_partition(partition, game)
    w = np.asarray(w, dtype=float)
    if w.shape != (game.n, game.n):
        raise InvalidArgument(f"weight matrix must be {game.n}x{game.n}")
    state = init_estimates(initial_state(actions0, game.m, partition), partition, w)
    yield state
    for _ in range(horizon - 1):
        state = step_distributed(state, game, partition, w, tiebreak, rng, workers)
        yield state


def tracking_errors(state: LearnerState) -> tuple[float, float]:
    """``(max_i ||qhat_i - centroid||, max_k ||column k error||)`` over all classes."""
    err = state.estimates - state.centroids[:, None, :]
    per_player = float(np.sqrt((err**2).sum(axis=2)).max())
    per_column = float(np.sqrt((err**2).sum(axis=1)).max())
    return per_player, per_column


# --- file formats -----------------------------------------------------------

def write_edge_list(g: Graph, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"n {g.n}\n")
        for i, j in g.edges:
            fh.write(f"{i} {j}\n")


def read_edge_list(path) -> Graph:
    try:
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    except OSError as exc:
        raise InvalidArgument(f"cannot read edge list {path}: {exc}") from exc
    if not lines or not lines[0].startswith("n "):
        raise InvalidArgument(f"{path}: first line must be 'n <count>'")
    try:
        n = int(lines[0].split()[1])
        edges = [tuple(int(x) for x in ln.split()) for ln in lines[1:]]
    except (ValueError, IndexError) as exc:
        raise InvalidArgument(f"{path}: malformed edge list ({exc})") from exc
    if any(len(e) != 2 for e in edges):
        raise InvalidArgument(f"{path}: every edge line needs exactly two node indices")
    return Graph(n, np.array(edges, dtype=int).reshape(-1, 2))


def write_weights_csv(w, path) -> None:
    w = np.asarray(w, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in w:
            writer.writerow([repr(float(x)) for x in row])


def read_weights_csv(path) -> np.ndarray:
    if not os.path.exists(path):
        raise InvalidArgument(f"weight matrix file {path} not found")
    with open(path, newline="") as fh:
        rows = [[float(x) for x in row] for row in csv.reader(fh) if row]
    return np.array(rows, dtype=float)
