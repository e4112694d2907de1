"""Channel-selection congestion games.

A player's payoff is minus the cost of its channel at the channel's load.
Expected payoffs against independent opponents only need the distribution of
the number of opponents sharing a channel: binomial when every opponent uses
the same mixed strategy, a convolution of binomials when opponents fall into a
few belief groups, Poisson-binomial otherwise.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .errors import CapacityError, InvalidArgument
from .game import ENUMERATION_CAP, PotentialTable, TabularGame

log = logging.getLogger(__name__)

PMF_TOL = 1e-9
# Above this many distinct opponent beliefs the Poisson-binomial recursion is used.
GROUPED_MAX_ROWS = 8


@dataclass(frozen=True)
class CostPolynomial:
    """``c(k) = a0 + a1*k + a2*k**2 + ...`` with ``coefficients = (a0, a1, ...)``."""

    coefficients: tuple

    def __post_init__(self):
        coeffs = tuple(float(a) for a in self.coefficients)
        if not coeffs:
            raise InvalidArgument("cost polynomial needs at least one coefficient")
        if not all(np.isfinite(coeffs)):
            raise InvalidArgument("cost coefficients must be finite")
        object.__setattr__(self, "coefficients", coeffs)

    def __call__(self, k):
        k = np.asarray(k, dtype=float)
        # Horner evaluation.
        out = np.zeros_like(k)
        for a in reversed(self.coefficients):
            out = out * k + a
        return out if out.ndim else float(out)

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1


class CongestionGame:
    """``n`` players choosing among ``len(channels)`` channels.

    Cost tables for loads ``1..n`` are precomputed; ``cost_table[r, k - 1]`` is
    ``c_r(k)``.
    """

    def __init__(self, n: int, channels: Sequence[CostPolynomial]):
        if n < 1:
            raise InvalidArgument("need at least one player")
        channels = [c if isinstance(c, CostPolynomial) else CostPolynomial(c) for c in channels]
        if not channels:
            raise InvalidArgument("need at least one channel")
        self.n = int(n)
        self.channels = tuple(channels)
        loads = np.arange(1, self.n + 1)
        self.cost_table = np.array([c(loads) for c in self.channels], dtype=float).reshape(len(channels), self.n)
        if not np.all(np.isfinite(self.cost_table)):
            raise InvalidArgument("channel costs must be finite for loads 1..n")
        self.cost_table.setflags(write=False)

    @property
    def m(self) -> int:
        return len(self.channels)

    def cost(self, channel: int, load: int) -> float:
        return float(self.cost_table[channel, load - 1])

    def max_full_load_cost(self) -> float:
        return float(np.abs(self.cost_table[:, -1]).max())

    def __repr__(self):
        return f"CongestionGame(n={self.n}, m={self.m})"


def random_costs(rng: np.random.Generator, m: int, degree: int = 3) -> list[CostPolynomial]:
    """Draw positive polynomial costs of the given degree (at most 3).

    ``a3 ~ U[0.001, 0.01]``, ``a2 ~ U[0.01, 0.1]``, ``a1 ~ U[0.1, 1]``, ``a0 = 0``.
    """
    if not 1 <= degree <= 3:
        raise InvalidArgument("degree must be 1, 2 or 3")
    ranges = [(0.1, 1.0), (0.01, 0.1), (0.001, 0.01)]
    out = []
    for _ in range(m):
        coeffs = [0.0] + [rng.uniform(lo, hi) for lo, hi in ranges[:degree]]
        out.append(CostPolynomial(tuple(coeffs)))
    return out


def _clamp_probs(p, where: str):
    p = np.asarray(p, dtype=float)
    clipped = np.clip(p, 0.0, 1.0)
    if np.any(clipped != p):
        log.debug("clamped %d %s probabilities into [0, 1]", int(np.sum(clipped != p)), where)
    return clipped


def binomial_pmf(p, trials: int) -> np.ndarray:
    """Binomial pmf over ``k = 0..trials`` for one or many success probabilities.

    ``p`` may be a scalar or an array; the pmf runs along a new last axis.
    Evaluated in log space, with exact handling of ``p`` in ``{0, 1}``.
    """
    p = np.asarray(p, dtype=float)
    k = np.arange(trials + 1, dtype=float)
    log_choose = gammaln(trials + 1.0) - gammaln(k + 1.0) - gammaln(trials - k + 1.0)
    edge = (p <= 0.0) | (p >= 1.0)
    inner = np.where(edge, 0.5, p)[..., None]
    # Logs are taken per probability, not per (probability, k) entry.
    logpmf = log_choose + k * np.log(inner) + (trials - k) * np.log1p(-inner)
    pmf = np.exp(logpmf)
    if np.any(edge):
        # Degenerate cases are exact point masses at k = 0 or k = trials.
        pmf[edge] = 0.0
        pmf[(p <= 0.0), 0] = 1.0
        pmf[(p >= 1.0), trials] = 1.0
    return pmf


def count_distribution_iid(centroid_prob: float, opponents: int) -> np.ndarray:
    """Distribution of how many of ``opponents`` i.i.d. players pick a channel.

    Entries outside ``[0, 1]`` (relaxed centroid estimates) are clamped first.
    """
    if opponents < 0:
        raise InvalidArgument("opponent count must be non-negative")
    p = float(_clamp_probs(centroid_prob, "centroid"))
    return binomial_pmf(p, int(opponents))


def count_distribution_heterogeneous(probs) -> np.ndarray:
    """Poisson-binomial pmf for independent opponents with different probabilities.

    Standard O(len(probs)**2) convolution.  ``probs`` may also be a 2-D array,
    in which case each row is an independent problem and the opponents run
    along the last axis.
    """
    probs = np.asarray(probs, dtype=float)
    if np.any(probs < 0.0) or np.any(probs > 1.0) or not np.all(np.isfinite(probs)):
        raise InvalidArgument("probabilities must lie in [0, 1]")
    batch = probs.shape[:-1]
    k = probs.shape[-1]
    pmf = np.zeros(batch + (k + 1,))
    pmf[..., 0] = 1.0
    for j in range(k):
        pj = probs[..., j, None]
        moved = pmf[..., : j + 1] * pj
        pmf[..., : j + 1] *= 1.0 - pj
        pmf[..., 1 : j + 2] += moved
    return pmf


def expected_channel_utility(game: CongestionGame, channel: int, counts) -> float:
    """Expected payoff of joining ``channel`` given the opponent-count pmf."""
    if not 0 <= channel < game.m:
        raise InvalidArgument(f"channel {channel} out of range")
    counts = np.asarray(counts, dtype=float)
    if counts.shape != (game.n,):
        raise InvalidArgument(f"count distribution must have length n = {game.n}")
    return -float(game.cost_table[channel] @ counts)


def expected_utilities_iid(game: CongestionGame, probs) -> np.ndarray:
    """Expected payoff of every channel when all ``n - 1`` opponents play ``probs``.

    ``probs`` has shape ``(..., m)``; the result has the same shape.  This is the
    vectorised form of :func:`count_distribution_iid` followed by
    :func:`expected_channel_utility`.
    """
    probs = _clamp_probs(probs, "belief")
    pmf = binomial_pmf(probs, game.n - 1)  # (..., m, n)
    return -np.einsum("...rk,rk->...r", pmf, game.cost_table)


def expected_utilities_heterogeneous(game: CongestionGame, beliefs) -> np.ndarray:
    """Expected payoff of every channel against opponents with individual beliefs.

    ``beliefs`` is ``(n - 1, m)``; one row per opponent.
    """
    beliefs = np.asarray(beliefs, dtype=float)
    if beliefs.shape != (game.n - 1, game.m):
        raise InvalidArgument(f"beliefs must have shape ({game.n - 1}, {game.m})")
    pmf = count_distribution_heterogeneous(_clamp_probs(beliefs.T, "belief"))  # (m, n)
    return -np.einsum("rk,rk->r", pmf, game.cost_table)


def expected_utilities_grouped(game: CongestionGame, rows, multiplicities) -> np.ndarray:
    """Expected payoffs when ``multiplicities[g]`` opponents each play ``rows[g]``.

    The opponent count on a channel is a sum of independent binomials, so its
    pmf is the convolution of one binomial per group.
    """
    rows = _clamp_probs(rows, "belief")
    mult = np.asarray(multiplicities, dtype=int)
    if rows.shape != (mult.size, game.m) or mult.sum() != game.n - 1 or np.any(mult < 1):
        raise InvalidArgument("groups must cover exactly n - 1 opponents")
    pmf = np.ones((game.m, 1))
    for p, c in zip(rows, mult):
        pmf = _convolve_rows(pmf, binomial_pmf(p, int(c)))
    return -np.einsum("rk,rk->r", pmf, game.cost_table)


def _convolve_rows(a, b):
    """Row-wise full convolution of two 2-D arrays with equal row counts."""
    if a.shape[1] > b.shape[1]:
        a, b = b, a
    out = np.zeros((a.shape[0], a.shape[1] + b.shape[1] - 1))
    width = b.shape[1]
    for k in range(a.shape[1]):
        out[:, k:k + width] += a[:, k:k + 1] * b
    return out


def expected_utilities(game: CongestionGame, beliefs) -> np.ndarray:
    """Expected payoff of every channel against one belief row per opponent.

    Picks the cheapest exact method: binomial when all rows agree, a
    convolution of binomials when only a few distinct rows occur (class
    centroids), and the Poisson-binomial recursion otherwise.
    """
    beliefs = np.asarray(beliefs, dtype=float)
    if beliefs.shape != (game.n - 1, game.m):
        raise InvalidArgument(f"beliefs must have shape ({game.n - 1}, {game.m})")
    if game.n == 1:
        return expected_utilities_iid(game, np.zeros(game.m))
    if np.all(beliefs == beliefs[0]):
        return expected_utilities_iid(game, beliefs[0])
    rows, counts = np.unique(beliefs, axis=0, return_counts=True)
    if rows.shape[0] <= GROUPED_MAX_ROWS:
        return expected_utilities_grouped(game, rows, counts)
    return expected_utilities_heterogeneous(game, beliefs)


def _check_profile(game: CongestionGame, profile) -> np.ndarray:
    y = np.asarray(profile, dtype=int)
    if y.shape != (game.n,):
        raise InvalidArgument(f"profile must have length {game.n}")
    if y.min() < 0 or y.max() >= game.m:
        raise InvalidArgument("channel index out of range")
    return y


def pure_utility(game: CongestionGame, profile, player: int) -> float:
    y = _check_profile(game, profile)
    if not 0 <= player < game.n:
        raise InvalidArgument(f"player {player} out of range")
    load = int(np.sum(y == y[player]))
    return -game.cost(int(y[player]), load)


def rosenthal_potential(game: CongestionGame, profile) -> float:
    """``-sum_r sum_{j=1}^{load_r} c_r(j)``; empty channels contribute nothing."""
    y = _check_profile(game, profile)
    loads = np.bincount(y, minlength=game.m)
    total = 0.0
    for r, load in enumerate(loads):
        total -= float(game.cost_table[r, :load].sum())
    return total


def to_tabular(game: CongestionGame) -> tuple[TabularGame, PotentialTable]:
    """Expand into a full payoff table plus the Rosenthal potential table."""
    n, m = game.n, game.m
    if m**n > ENUMERATION_CAP:
        raise CapacityError(f"m**n = {m}**{n} exceeds the enumeration cap {ENUMERATION_CAP}")
    u = np.empty((n,) + (m,) * n)
    phi = np.empty((m,) * n)
    for y in np.ndindex(*(m,) * n):
        for i in range(n):
            u[(i,) + y] = pure_utility(game, y, i)
        phi[y] = rosenthal_potential(game, y)
    return TabularGame(u, identical_interest=False), PotentialTable(phi)


def consensus_gap(game: CongestionGame, f) -> float:
    """Best pure deviation payoff against ``(f, ..., f)`` minus its own payoff.

    Uses the binomial closed form; every player faces the same problem, so
    this equals the equilibrium gap of the consensus profile.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (game.m,):
        raise InvalidArgument(f"strategy must have length {game.m}")
    util = expected_utilities_iid(game, f)
    return float(util.max() - f @ util)


def consensus_utility(game: CongestionGame, f) -> float:
    """Payoff of any player at the consensus profile ``(f, ..., f)``."""
    f = np.asarray(f, dtype=float)
    return float(f @ expected_utilities_iid(game, f))


def profile_gaps(game: CongestionGame, p) -> tuple[np.ndarray, np.ndarray]:
    """Per-player deviation gaps and payoffs at an arbitrary joint strategy ``p``.

    Profiles with only a few distinct rows are evaluated once per row with
    :func:`expected_utilities_grouped`.
    """
    p = np.asarray(p, dtype=float)
    gaps = np.empty(game.n)
    utils = np.empty(game.n)
    rows, inverse, counts = np.unique(p, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if game.n > 1 and rows.shape[0] <= GROUPED_MAX_ROWS:
        # Players sharing a row share their deviation payoffs.
        for g in range(rows.shape[0]):
            mult = counts.copy()
            mult[g] -= 1
            keep = mult > 0
            dev = expected_utilities_grouped(game, rows[keep], mult[keep])
            members = inverse == g
            utils[members] = p[members] @ dev
            gaps[members] = dev.max() - utils[members]
        return gaps, utils
    for i in range(game.n):
        dev = expected_utilities(game, np.delete(p, i, axis=0))
        utils[i] = p[i] @ dev
        gaps[i] = dev.max() - utils[i]
    return gaps, utils
