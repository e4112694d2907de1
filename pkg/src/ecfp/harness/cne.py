"""Numerical consensus equilibria of congestion games.

The experiments measure distance to a consensus equilibrium that is never
given in closed form, so it is solved for here and then checked with the gap
function before anyone is allowed to use it.
"""
from __future__ import annotations

import logging

import numpy as np
from scipy.optimize import brentq

from .. import congestion as cg
from ..errors import ConvergenceError, InvalidArgument

log = logging.getLogger(__name__)


def _mirror(game, p, tol, max_iters, gamma):
    # Damped multiplicative-weights iteration; the step halves whenever the
    # residual goes up.
    scale = max(float(np.ptp(game.cost_table)), 1e-12)
    best_p, best_res = p.copy(), np.inf
    prev = np.inf
    for it in range(max_iters):
        util = cg.expected_utilities_iid(game, p)
        res = float(util.max() - p @ util)
        if res < best_res:
            best_p, best_res = p.copy(), res
        if res <= tol:
            return p, res, it
        if res > prev:
            gamma *= 0.5
        prev = res
        target = p * np.exp((util - util.max()) / scale * 10.0)
        target /= target.sum()
        p = (1.0 - gamma) * p + gamma * target
    raise ConvergenceError(f"mirror iteration stalled at residual {best_res:.3e}",
                           best_residual=best_res, best_iterate=best_p)


def _increasing(game) -> bool:
    return bool(np.all(np.diff(game.cost_table, axis=1) > 0)) or game.n == 1


def _waterfill(game):
    # With load-increasing costs, channel r's payoff depends only on p_r and
    # strictly decreases in it.  Equalise payoffs on the support with a
    # common level and bisect on that level.
    m = game.m

    def util(r, x):
        return float(cg.expected_utilities_iid(game, np.full(m, x))[r])

    hi = np.array([util(r, 0.0) for r in range(m)])
    lo = np.array([util(r, 1.0) for r in range(m)])

    def share(r, level):
        if level >= hi[r]:
            return 0.0
        if level <= lo[r]:
            return 1.0
        return brentq(lambda x: util(r, x) - level, 0.0, 1.0, xtol=1e-15, rtol=1e-15)

    def excess(level):
        return sum(share(r, level) for r in range(m)) - 1.0

    a, b = float(lo.min()) - 1.0, float(hi.max())
    level = brentq(excess, a, b, xtol=1e-14 * max(1.0, abs(b)), rtol=1e-15, maxiter=500)
    p = np.array([share(r, level) for r in range(m)])
    return p / p.sum()


def solve_cne(game: cg.CongestionGame, tol: float = 1e-10, max_iters: int = 200_000,
              init=None, method: str = "auto", gamma: float = 0.1) -> tuple[np.ndarray, float]:
    """Find ``p`` with consensus gap at most ``tol``; returns ``(p, residual)``.

    ``method`` is ``"mirror"`` (damped multiplicative weights from ``init``,
    uniform by default), ``"waterfill"`` (level bisection, needs load-increasing
    costs, ignores ``init``) or ``"auto"`` (waterfill when applicable, mirror
    otherwise).  The
    result is always re-verified with :func:`ecfp.congestion.consensus_gap`.
    """
    if not isinstance(game, cg.CongestionGame):
        raise InvalidArgument("solve_cne needs a congestion game")
    if init is not None:
        init = np.asarray(init, dtype=float)
        if init.shape != (game.m,) or np.any(init <= 0) or not np.all(np.isfinite(init)):
            raise InvalidArgument("initial strategy must be a strictly positive vector over the channels")
    if method == "auto":
        method = "waterfill" if _increasing(game) else "mirror"
    if method == "waterfill":
        if not _increasing(game):
            raise InvalidArgument("waterfill needs costs strictly increasing in load")
        p = _waterfill(game)
    elif method == "mirror":
        p = np.full(game.m, 1.0 / game.m) if init is None else init
        p, _, iters = _mirror(game, p / p.sum(), tol, max_iters, gamma)
        log.debug("mirror iteration converged in %d iterations", iters)
    else:
        raise InvalidArgument(f"unknown CNE method {method!r}")
    residual = cg.consensus_gap(game, p)
    if not residual <= tol:
        raise ConvergenceError(f"solver output fails verification: gap {residual:.3e} > {tol:.1e}",
                               best_residual=residual, best_iterate=p)
    return p, residual
