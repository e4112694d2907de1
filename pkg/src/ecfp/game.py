"""Normal-form games, mixed utilities and equilibrium metrics.

Tabular games store one payoff tensor per player, indexed by the joint pure
profile.  Everything here is brute force over the ``m**n`` profiles and is
meant for small games and as an oracle for the specialised congestion code.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from .errors import CapacityError, InvalidArgument

SIMPLEX_TOL = 1e-9
ENUMERATION_CAP = 10**7


@dataclass(frozen=True)
class MixedStrategy:
    """A probability vector over ``m`` actions.

    Strict strategies live on the simplex.  Relaxed ones only need to sum to
    one; consensus estimates of a centroid can leave the simplex for a while.
    Use :meth:`strict` or :meth:`relaxed` to build validated instances.
    """

    values: np.ndarray
    is_relaxed: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise InvalidArgument(f"strategy must be a non-empty vector, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgument("strategy has non-finite entries")
        if abs(v.sum() - 1.0) > SIMPLEX_TOL:
            raise InvalidArgument(f"strategy entries sum to {v.sum()!r}, not 1")
        if not self.is_relaxed and v.min() < -SIMPLEX_TOL:
            raise InvalidArgument("strict strategy has negative entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def strict(cls, values) -> "MixedStrategy":
        return cls(values, is_relaxed=False)

    @classmethod
    def relaxed(cls, values) -> "MixedStrategy":
        return cls(values, is_relaxed=True)

    @classmethod
    def pure(cls, action: int, m: int) -> "MixedStrategy":
        v = np.zeros(m)
        v[action] = 1.0
        return cls(v)

    @property
    def m(self) -> int:
        return self.values.size

    @property
    def on_simplex(self) -> bool:
        return bool(self.values.min() >= -SIMPLEX_TOL)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self):
        return self.values.size


def joint_strategy(strategies, n: int | None = None, m: int | None = None) -> np.ndarray:
    """Stack per-player strategies into an ``(n, m)`` array, checking dimensions."""
    p = np.array([np.asarray(s, dtype=float) for s in strategies])
    if p.ndim != 2:
        raise InvalidArgument("joint strategy must be a list of equal-length vectors")
    if n is not None and p.shape[0] != n:
        raise InvalidArgument(f"expected {n} strategies, got {p.shape[0]}")
    if m is not None and p.shape[1] != m:
        raise InvalidArgument(f"expected strategies over {m} actions, got {p.shape[1]}")
    return p


@dataclass(frozen=True)
class TabularGame:
    """A finite game with ``n`` players sharing ``m`` actions.

    ``utilities[i][y]`` is the payoff of player ``i`` at the pure profile ``y``
    (a tuple of ``n`` action indices), so the array has shape
    ``(n,) + (m,) * n``.
    """

    utilities: np.ndarray
    identical_interest: bool = False
    n: int = field(init=False)
    m: int = field(init=False)

    def __post_init__(self):
        u = np.array(self.utilities, dtype=float)
        if u.ndim < 2:
            raise InvalidArgument("utilities must have shape (n,) + (m,)*n")
        n = u.shape[0]
        if u.ndim != n + 1:
            raise InvalidArgument(f"{n} players need an {n + 1}-dimensional utility array, got {u.ndim}")
        m = u.shape[1]
        if any(d != m for d in u.shape[1:]):
            raise InvalidArgument("heterogeneous action spaces are not supported")
        if m**n > ENUMERATION_CAP:
            raise CapacityError(f"m**n = {m}**{n} exceeds the enumeration cap {ENUMERATION_CAP}")
        if not np.all(np.isfinite(u)):
            raise InvalidArgument("utilities must be finite")
        if self.identical_interest and not np.allclose(u, u[0], rtol=0.0, atol=1e-12):
            raise InvalidArgument("game flagged identical-interest but payoffs differ across players")
        u.setflags(write=False)
        object.__setattr__(self, "utilities", u)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "m", m)

    @classmethod
    def identical(cls, common: np.ndarray) -> "TabularGame":
        """Identical-interest game from a single payoff tensor of shape ``(m,)*n``."""
        common = np.asarray(common, dtype=float)
        n = common.ndim
        return cls(np.broadcast_to(common, (n,) + common.shape).copy(), identical_interest=True)

    @classmethod
    def from_function(cls, n: int, m: int, payoff: Callable[[tuple, int], float],
                      identical_interest: bool = False) -> "TabularGame":
        """Tabulate ``payoff(profile, player)`` over every pure profile."""
        if m**n > ENUMERATION_CAP:
            raise CapacityError(f"m**n = {m}**{n} exceeds the enumeration cap {ENUMERATION_CAP}")
        u = np.empty((n,) + (m,) * n)
        for y in np.ndindex(*(m,) * n):
            for i in range(n):
                u[(i,) + y] = payoff(y, i)
        return cls(u, identical_interest=identical_interest)

    def payoff(self, profile: Sequence[int], player: int) -> float:
        return float(self.utilities[(player,) + tuple(profile)])


@dataclass(frozen=True)
class PotentialTable:
    """Potential value for every pure profile, shape ``(m,)*n``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __call__(self, profile: Sequence[int]) -> float:
        return float(self.values[tuple(profile)])


def _check_joint(game: TabularGame, p) -> np.ndarray:
    p = joint_strategy(p)
    if p.shape != (game.n, game.m):
        raise InvalidArgument(f"joint strategy shape {p.shape} does not match game ({game.n}, {game.m})")
    if game.m**game.n > ENUMERATION_CAP:
        raise CapacityError("profile count exceeds the enumeration cap")
    return p


def _contract_except(table: np.ndarray, p: np.ndarray, keep: int | None) -> np.ndarray:
    # Sums table[y] * prod_j p[j, y_j] over every axis except `keep`.
    out = table
    # Contract from the last axis so remaining axis positions stay valid.
    for j in range(p.shape[0] - 1, -1, -1):
        if j == keep:
            continue
        out = np.tensordot(out, p[j], axes=([j], [0]))
    return out


def mixed_utility(game: TabularGame, p, player: int) -> float:
    """Expected payoff of ``player`` when everyone samples independently from ``p``.

    ``p`` may hold relaxed (off-simplex) vectors; the multilinear form is then
    evaluated as is.
    """
    p = _check_joint(game, p)
    if not 0 <= player < game.n:
        raise InvalidArgument(f"player {player} out of range")
    return float(_contract_except(game.utilities[player], p, keep=None))


def deviation_payoffs(game: TabularGame, p, player: int) -> np.ndarray:
    """``U_i(e_a, p_-i)`` for every pure action ``a`` of ``player``."""
    p = _check_joint(game, p)
    if not 0 <= player < game.n:
        raise InvalidArgument(f"player {player} out of range")
    return np.asarray(_contract_except(game.utilities[player], p, keep=player), dtype=float)


def player_gaps(game: TabularGame, p) -> np.ndarray:
    """Per-player gain from the best unilateral pure deviation."""
    p = _check_joint(game, p)
    gaps = np.empty(game.n)
    for i in range(game.n):
        dev = deviation_payoffs(game, p, i)
        gaps[i] = dev.max() - float(p[i] @ dev)
    return gaps


def equilibrium_gap(game: TabularGame, p) -> float:
    """Largest gain any player can get by deviating unilaterally from ``p``.

    ``p`` is an epsilon-equilibrium exactly when the result is at most epsilon.
    Only pure deviations are examined; by multilinearity no mixed deviation
    does better.
    """
    return float(player_gaps(game, p).max())


def consensus_gap_function(game: TabularGame, f) -> float:
    """Gap of the consensus profile in which every player uses ``f``.

    Defined for identical-interest games; the value is the best pure deviation
    payoff against ``(f, ..., f)`` minus the payoff of ``(f, ..., f)`` itself.
    """
    if not game.identical_interest:
        raise InvalidArgument("consensus gap requires an identical-interest game")
    f = np.asarray(f, dtype=float)
    if f.shape != (game.m,):
        raise InvalidArgument(f"consensus strategy must have length {game.m}")
    return equilibrium_gap(game, np.tile(f, (game.n, 1)))


def _swap_players(table: np.ndarray, i: int, j: int, offset: int = 0) -> np.ndarray:
    return np.swapaxes(table, offset + i, offset + j)


def check_permutation_invariance(game) -> bool:
    """Exhaustively test the pairwise swap identity.

    For an identical-interest game (or a bare :class:`PotentialTable`) this is
    ``u([a]_i, [b]_j, y) == u([b]_i, [a]_j, y)`` for every pair.  For general
    tabular games the symmetric-game form is used: swapping the actions of
    ``i`` and ``j`` swaps their payoffs and leaves everyone else's unchanged,
    which reduces to the former when payoffs are identical.
    """
    if isinstance(game, PotentialTable):
        v = game.values
        shape = v.shape
        if len(set(shape)) > 1:
            raise InvalidArgument("heterogeneous action spaces")
        return all(np.allclose(v, _swap_players(v, i, j), rtol=0.0, atol=SIMPLEX_TOL)
                   for i, j in combinations(range(v.ndim), 2))
    if not isinstance(game, TabularGame):
        raise InvalidArgument("expected a TabularGame or PotentialTable")
    u = game.utilities
    for i, j in combinations(range(game.n), 2):
        swapped = _swap_players(u, i, j, offset=1)
        relabeled = swapped.copy()
        relabeled[[i, j]] = swapped[[j, i]]
        if not np.allclose(u, relabeled, rtol=0.0, atol=SIMPLEX_TOL):
            return False
    return True


def check_exact_potential(game: TabularGame, phi: PotentialTable) -> bool:
    """True iff every unilateral payoff difference equals the potential difference."""
    phi_v = phi.values if isinstance(phi, PotentialTable) else np.asarray(phi, dtype=float)
    if phi_v.shape != game.utilities.shape[1:]:
        raise InvalidArgument(f"potential shape {phi_v.shape} does not match game profiles")
    for i in range(game.n):
        # u_i - phi must not depend on player i's own action.
        d = game.utilities[i] - phi_v
        ref = np.take(d, [0], axis=i)
        if not np.allclose(d, ref, rtol=0.0, atol=SIMPLEX_TOL):
            return False
    return True


def normalized_consensus_distance(f, target, n: int) -> float:
    """Distance between the consensus tuples ``f^n`` and ``target^n``, divided by sqrt(n).

    Stacking ``n`` copies scales the Euclidean norm by exactly sqrt(n), so the
    normalised distance is just ``||f - target||`` and does not depend on ``n``.
    """
    f = np.asarray(f, dtype=float)
    target = np.asarray(target, dtype=float)
    if f.shape != target.shape:
        raise InvalidArgument(f"length mismatch: {f.shape} vs {target.shape}")
    if n < 1:
        raise InvalidArgument("n must be positive")
    return float(np.linalg.norm(f - target))
