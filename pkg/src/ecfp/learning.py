"""Repeated-play learning: fictitious play and empirical-centroid fictitious play.

Players are grouped into classes by a :class:`PartitionSpec`.  Each player
best-responds to a profile in which every opponent is assumed to play the
centroid of its class.  Singleton classes recover classical fictitious play
and a single class gives plain centroid play.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from itertools import combinations
from typing import Iterator, Sequence

import numpy as np

from . import congestion as cg
from .errors import InvalidArgument
from .game import PotentialTable, SIMPLEX_TOL, TabularGame, deviation_payoffs

log = logging.getLogger(__name__)

TIE_RTOL = 1e-12
TIE_RULES = ("lowest", "uniform")


@dataclass(frozen=True)
class PartitionSpec:
    """Disjoint classes of player indices covering ``0..n-1``."""

    classes: tuple
    psi: np.ndarray

    @classmethod
    def from_classes(cls, classes: Sequence[Sequence[int]], n: int) -> "PartitionSpec":
        classes = tuple(tuple(sorted(int(i) for i in c)) for c in classes)
        if any(len(c) == 0 for c in classes):
            raise InvalidArgument("partition has an empty class")
        psi = np.full(n, -1, dtype=int)
        for k, members in enumerate(classes):
            for i in members:
                if not 0 <= i < n:
                    raise InvalidArgument(f"player {i} out of range for n = {n}")
                if psi[i] != -1:
                    raise InvalidArgument(f"player {i} appears in classes {psi[i]} and {k}")
                psi[i] = k
        if np.any(psi < 0):
            missing = np.flatnonzero(psi < 0).tolist()
            raise InvalidArgument(f"partition does not cover players {missing}")
        psi.setflags(write=False)
        return cls(classes, psi)

    @classmethod
    def single(cls, n: int) -> "PartitionSpec":
        return cls.from_classes([range(n)], n)

    @classmethod
    def singleton(cls, n: int) -> "PartitionSpec":
        return cls.from_classes([[i] for i in range(n)], n)

    @property
    def n(self) -> int:
        return self.psi.size

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def sizes(self) -> np.ndarray:
        return np.array([len(c) for c in self.classes], dtype=int)

    def is_swap_invariant(self, phi: PotentialTable) -> bool:
        """Check that swapping two same-class players' actions leaves the potential unchanged."""
        v = phi.values if isinstance(phi, PotentialTable) else np.asarray(phi, dtype=float)
        if v.ndim != self.n:
            raise InvalidArgument("potential table dimension does not match partition size")
        for members in self.classes:
            for i, j in combinations(members, 2):
                if not np.allclose(v, np.swapaxes(v, i, j), rtol=0.0, atol=SIMPLEX_TOL):
                    return False
        return True


def validate_partition(partition: PartitionSpec, game, potential: PotentialTable | None = None) -> None:
    """Check the partition against ``game``; raises on violation.

    With a tabular potential the within-class swap condition is verified
    exhaustively.  Congestion potentials depend only on channel loads, so any
    partition qualifies.  For other games the condition is taken on trust.
    """
    if partition.n != game.n:
        raise InvalidArgument(f"partition covers {partition.n} players, game has {game.n}")
    if isinstance(game, cg.CongestionGame):
        return
    if potential is None and isinstance(game, TabularGame) and game.identical_interest:
        potential = PotentialTable(game.utilities[0])
    if potential is None:
        log.info("no potential table available; within-class swap invariance is assumed")
        return
    if not partition.is_swap_invariant(potential):
        raise InvalidArgument("potential is not swap-invariant within some class")


@dataclass(frozen=True)
class LearnerState:
    """Everything the simulation carries from one play to the next.

    ``q[i]`` is player i's empirical distribution after ``t`` plays,
    ``centroids[k]`` the exact mean of ``q`` over class ``k`` and, in
    distributed runs, ``estimates[k, i]`` is player i's running estimate of
    ``centroids[k]``.
    """

    t: int
    actions: np.ndarray
    q: np.ndarray
    centroids: np.ndarray
    estimates: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def m(self) -> int:
        return self.q.shape[1]


def pure_vectors(actions, m: int) -> np.ndarray:
    actions = np.asarray(actions, dtype=int)
    out = np.zeros((actions.size, m))
    out[np.arange(actions.size), actions] = 1.0
    return out


def empirical_update(q_i, action, t: int) -> np.ndarray:
    """Running average after play ``t + 1``: ``q + (e_action - q) / (t + 1)``.

    Works on one vector or on an ``(n, m)`` stack with one action per row.
    """
    if t < 1:
        raise InvalidArgument("empirical update needs t >= 1; use initial_state for t = 1")
    q_i = np.asarray(q_i, dtype=float)
    if q_i.ndim == 1:
        e = np.zeros_like(q_i)
        e[int(action)] = 1.0
    else:
        e = pure_vectors(action, q_i.shape[1])
    return q_i + (e - q_i) / (t + 1)


def class_centroids(q, partition: PartitionSpec) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape[0] != partition.n:
        raise InvalidArgument(f"expected {partition.n} empirical distributions, got {q.shape[0]}")
    return np.array([q[list(members)].mean(axis=0) for members in partition.classes])


def initial_state(actions, m: int, partition: PartitionSpec) -> LearnerState:
    """State at ``t = 1``: each empirical distribution is the first action."""
    actions = np.asarray(actions, dtype=int)
    if actions.shape != (partition.n,):
        raise InvalidArgument("need one initial action per player")
    if actions.min() < 0 or actions.max() >= m:
        raise InvalidArgument("initial action out of range")
    q = pure_vectors(actions, m)
    return LearnerState(1, actions.copy(), q, class_centroids(q, partition))


def initial_actions(rule, n: int, m: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """``rule`` is a fixed action index or ``"uniform"`` (seeded draw per player)."""
    if rule == "uniform":
        if rng is None:
            raise InvalidArgument("uniform initial actions need an rng")
        return rng.integers(0, m, size=n)
    a = int(rule)
    if not 0 <= a < m:
        raise InvalidArgument(f"initial action {a} out of range")
    return np.full(n, a, dtype=int)


def select_action(values, tiebreak: str = "lowest", rng: np.random.Generator | None = None) -> int:
    """Index of the maximum of ``values``.

    Values within a relative 1e-12 of the maximum count as tied, so round-off
    in equivalent computations cannot flip the choice.
    """
    if tiebreak not in TIE_RULES:
        raise InvalidArgument(f"unknown tie-break rule {tiebreak!r}")
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise InvalidArgument("empty action set")
    best = values.max()
    tol = TIE_RTOL * max(1.0, abs(best))
    ties = np.flatnonzero(values >= best - tol)
    if tiebreak == "lowest" or ties.size == 1:
        return int(ties[0])
    if rng is None:
        raise InvalidArgument("uniform tie-breaking needs an rng")
    return int(rng.choice(ties))


def response_values(game, player: int, beliefs) -> np.ndarray:
    """Expected payoff of each pure action of ``player`` against ``beliefs``.

    ``beliefs`` has one row per opponent, in player order with ``player``
    removed.  Congestion games use the binomial closed form when all rows
    agree, a convolution of binomials for a few distinct rows and the
    Poisson-binomial recursion otherwise; tabular games are evaluated by
    brute force.
    """
    beliefs = np.asarray(beliefs, dtype=float)
    if beliefs.shape != (game.n - 1, game.m):
        raise InvalidArgument(f"beliefs must have shape ({game.n - 1}, {game.m})")
    if isinstance(game, cg.CongestionGame):
        return cg.expected_utilities(game, beliefs)
    if isinstance(game, TabularGame):
        p = np.insert(beliefs, player, np.full(game.m, 1.0 / game.m), axis=0)
        return deviation_payoffs(game, p, player)
    raise InvalidArgument(f"unsupported game type {type(game).__name__}")


def best_response(game, player: int, beliefs, tiebreak: str = "lowest",
                  rng: np.random.Generator | None = None) -> int:
    return select_action(response_values(game, player, beliefs), tiebreak, rng)


def composite_beliefs(class_strategies, partition: PartitionSpec, player: int) -> np.ndarray:
    """Opponent profile where each opponent ``j`` plays ``class_strategies[psi(j)]``."""
    rows = np.asarray(class_strategies)[partition.psi]
    return np.delete(rows, player, axis=0)


def _choose_all(values: np.ndarray, tiebreak: str, rng) -> np.ndarray:
    # Sequential in player order so seeded tie-breaking is schedule independent.
    return np.array([select_action(v, tiebreak, rng) for v in values], dtype=int)


def _values_for_players(game, beliefs_of, n: int, workers: int) -> np.ndarray:
    def one(i):
        return response_values(game, i, beliefs_of(i))

    if workers > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return np.array(list(pool.map(one, range(n))))
    return np.array([one(i) for i in range(n)])


def centroid_response_values(game, state: LearnerState, partition: PartitionSpec,
                             workers: int = 1) -> np.ndarray:
    """``(n, m)`` payoffs of every action for every player against exact class centroids."""
    n = state.n
    if isinstance(game, cg.CongestionGame) and partition.num_classes == 1:
        # Every player faces the same i.i.d. opponents.
        row = cg.expected_utilities_iid(game, state.centroids[0] if n > 1 else np.zeros(game.m))
        return np.tile(row, (n, 1))
    if isinstance(game, cg.CongestionGame) and partition.num_classes <= cg.GROUPED_MAX_ROWS:
        # Payoffs depend only on the player's class.
        sizes = np.bincount(partition.psi, minlength=partition.num_classes)
        per_class = np.empty((partition.num_classes, game.m))
        for k in range(partition.num_classes):
            mult = sizes.copy()
            mult[k] -= 1
            keep = mult > 0
            per_class[k] = cg.expected_utilities_grouped(game, state.centroids[keep], mult[keep])
        return per_class[partition.psi]
    return _values_for_players(
        game, lambda i: composite_beliefs(state.centroids, partition, i), n, workers)


def advance(state: LearnerState, actions: np.ndarray, partition: PartitionSpec) -> LearnerState:
    """Record the next joint action and refresh empirical distributions and centroids."""
    q = empirical_update(state.q, actions, state.t)
    return replace(state, t=state.t + 1, actions=actions, q=q,
                   centroids=class_centroids(q, partition))


def step_centralized(state: LearnerState, game, partition: PartitionSpec,
                     tiebreak: str = "lowest", rng: np.random.Generator | None = None,
                     workers: int = 1) -> LearnerState:
    """One play in which everyone best-responds to the exact class centroids."""
    values = centroid_response_values(game, state, partition, workers)
    return advance(state, _choose_all(values, tiebreak, rng), partition)


def fp_step(state: LearnerState, game, tiebreak: str = "lowest",
            rng: np.random.Generator | None = None) -> LearnerState:
    """Classical fictitious play: respond to each opponent's own empirical distribution."""
    n = state.n
    actions = np.empty(n, dtype=int)
    values = [response_values(game, i, np.delete(state.q, i, axis=0)) for i in range(n)]
    for i in range(n):
        actions[i] = select_action(values[i], tiebreak, rng)
    q = empirical_update(state.q, actions, state.t)
    return LearnerState(state.t + 1, actions, q, q.copy())


def run_centralized(game, partition: PartitionSpec, horizon: int, actions0,
                    tiebreak: str = "lowest", rng: np.random.Generator | None = None,
                    workers: int = 1) -> Iterator[LearnerState]:
    """Yield the states at ``t = 1..horizon``; nothing when ``horizon`` is 0."""
    if horizon <= 0:
        return
    validate_partition(partition, game)
    state = initial_state(actions0, game.m, partition)
    yield state
    for _ in range(horizon - 1):
        state = step_centralized(state, game, partition, tiebreak, rng, workers)
        yield state
