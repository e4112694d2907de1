"""Invariant suite behind ``ecfp validate``.

Each check returns ``(name, ok, detail)``.  Checks work on the configured
objects where that is cheap, and on scaled-down copies where exhaustive
enumeration would be too large.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from .. import congestion as cg
from ..consensus import (
    init_estimates,
    spectral_contraction,
    step_distributed,
    tracking_error_bound,
    tracking_errors,
    weight_matrix_violations,
)
from ..errors import ECFPError
from ..game import check_exact_potential
from ..learning import PartitionSpec, initial_actions, initial_state
from .config import ExperimentConfig, build_game, build_graph, build_partition, build_weights


def _enumerate_counts(probs) -> np.ndarray:
    out = np.zeros(len(probs) + 1)
    for bits in itertools.product((0, 1), repeat=len(probs)):
        out[sum(bits)] += math.prod(p if b else 1.0 - p for p, b in zip(probs, bits))
    return out


def check_count_distributions(rng, samples: int = 20, max_opponents: int = 8):
    worst = 0.0
    for _ in range(samples):
        k = int(rng.integers(0, max_opponents + 1))
        probs = rng.random(k)
        worst = max(worst, np.abs(cg.count_distribution_heterogeneous(probs) - _enumerate_counts(probs)).max())
        p = float(rng.random())
        worst = max(worst, np.abs(cg.count_distribution_iid(p, k) - _enumerate_counts([p] * k)).max())
    return "count-distributions", worst <= 1e-10, f"max deviation from enumeration {worst:.2e}"


def check_potential(game, potential):
    if isinstance(game, cg.CongestionGame):
        small = cg.CongestionGame(min(game.n, 4), game.channels[:3])
        tab, phi = cg.to_tabular(small)
        ok = check_exact_potential(tab, phi)
        return "exact-potential", ok, f"Rosenthal identity on n={small.n}, {small.m} channels"
    if potential is None:
        return "exact-potential", True, "no potential table supplied; skipped"
    ok = check_exact_potential(game, potential)
    return "exact-potential", ok, "tabular potential identity"


def check_weights(w, graph):
    problems = weight_matrix_violations(w, graph)
    if problems:
        return "weight-matrix", False, "; ".join(problems)
    lam = spectral_contraction(w) if w.shape[0] > 1 else 0.0
    return "weight-matrix", True, f"doubly stochastic, graph-conformant, lambda={lam:.6f}"


def check_short_run(game, partition: PartitionSpec, w, actions0, steps: int):
    lam = spectral_contraction(w) if game.n > 1 else 0.0
    scale = float(np.max(game.n / partition.sizes()))
    state = init_estimates(initial_state(actions0, game.m, partition), partition, w)
    worst = 0.0
    for _ in range(steps):
        _, per_column = tracking_errors(state)
        bound = tracking_error_bound(game.n, lam, state.t, scale)
        worst = max(worst, per_column / bound)
        if per_column > bound + 1e-9:
            return "tracking-bound", False, f"t={state.t}: error {per_column:.3e} exceeds bound {bound:.3e}"
        state = step_distributed(state, game, partition, w)
    return "tracking-bound", True, f"{steps} steps, max error/bound ratio {worst:.3e}"


def run_checks(cfg: ExperimentConfig, short_steps: int = 200) -> list[tuple[str, bool, str]]:
    rngs = cfg.rngs()
    results = []
    game, potential = build_game(cfg, rngs["costs"])
    results.append(check_count_distributions(np.random.default_rng(cfg.seed)))
    results.append(check_potential(game, potential))
    if cfg.algorithm == "ecfp-distributed":
        graph, _ = build_graph(cfg, game.n, rngs["graph"])
        w = build_weights(cfg, graph, game.n)
        name, ok, detail = check_weights(w, graph)
        results.append((name, ok, detail))
        if ok:
            partition = build_partition(cfg, game.n)
            actions0 = initial_actions(cfg.initial_actions, game.n, game.m, rngs["initial"])
            try:
                results.append(check_short_run(game, partition, w, actions0, min(cfg.horizon, short_steps)))
            except ECFPError as exc:
                results.append(("tracking-bound", False, str(exc)))
    return results
