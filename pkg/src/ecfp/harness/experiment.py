"""Running configured experiments and turning learner states into metrics."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .. import congestion as cg
from ..consensus import (
    check_weight_matrix,
    class_signals,
    run_distributed,
    spectral_contraction,
    tracking_error_bound,
    tracking_errors,
)
from ..errors import ConvergenceError, ECFPError, InvariantViolation
from ..game import TabularGame, deviation_payoffs, player_gaps
from ..learning import LearnerState, PartitionSpec, fp_step, initial_actions, initial_state, run_centralized
from .cne import solve_cne
from .config import ExperimentConfig, build_game, build_graph, build_partition, build_weights

log = logging.getLogger(__name__)

INVARIANT_TOL = 1e-9


class RunError(ECFPError):
    """Failure inside the learning loop, tagged with the step it happened at."""

    def __init__(self, t: int, cause: Exception):
        super().__init__(f"step {t}: {cause}")
        self.t = t


@dataclass
class TrajectoryRecord:
    t: int
    gap: float
    dist_cne: float
    centroid_utility: float
    max_est_err: float = math.nan
    err_bound: float = math.nan
    centroids: np.ndarray | None = field(default=None, compare=False, repr=False)


class Metrics:
    """Per-step metric evaluation for one game and partition."""

    def __init__(self, game, partition: PartitionSpec, cne=None):
        self.game = game
        self.partition = partition
        self.cne = cne

    def gap_and_utility(self, centroids) -> tuple[float, float]:
        game, part = self.game, self.partition
        if isinstance(game, cg.CongestionGame) and part.num_classes == 1:
            f = centroids[0]
            util = cg.expected_utilities_iid(game, f)
            return float(util.max() - f @ util), float(f @ util)
        profile = np.asarray(centroids)[part.psi]
        if isinstance(game, cg.CongestionGame):
            gaps, utils = cg.profile_gaps(game, profile)
            return float(gaps.max()), float(utils.mean())
        gaps = player_gaps(game, profile)
        utils = [float(profile[i] @ deviation_payoffs(game, profile, i)) for i in range(game.n)]
        return float(gaps.max()), float(np.mean(utils))

    def distance(self, state: LearnerState) -> float:
        """Normalised distance of the tracked profile to the consensus equilibrium.

        Centralised runs use the exact class centroids; distributed runs use
        player 0's own estimates, which is what that player would act on.
        """
        if self.cne is None:
            return math.nan
        if state.estimates is not None:
            rows = state.estimates[:, 0, :][self.partition.psi]
        else:
            rows = state.centroids[self.partition.psi]
        return float(np.linalg.norm(rows - self.cne) / math.sqrt(state.n))


def _default_epsilon(game) -> float:
    if isinstance(game, cg.CongestionGame):
        return 0.05 * game.max_full_load_cost()
    return 0.05 * float(np.abs(game.utilities).max())


def check_tracking(state: LearnerState, lam: float, scale: float = 1.0) -> tuple[float, float]:
    """Assert the distributed-tracking invariants; returns ``(max error, bound)``."""
    n = state.n
    bound = tracking_error_bound(n, lam, state.t, scale)
    per_player, per_column = tracking_errors(state)
    if per_column > bound + INVARIANT_TOL:
        raise InvariantViolation("tracking-bound", f"t={state.t}: column error {per_column} > {bound}")
    if per_player > bound + INVARIANT_TOL:
        raise InvariantViolation("tracking-bound", f"t={state.t}: player error {per_player} > {bound}")
    return per_player, bound


def check_conservation(state: LearnerState, partition: PartitionSpec) -> None:
    """Doubly stochastic weights conserve the column sums of the tracked signals."""
    sig = class_signals(state.q, partition)
    drift = np.abs(state.estimates.sum(axis=1) - sig.sum(axis=1)).max()
    if drift > INVARIANT_TOL:
        raise InvariantViolation("column-sum-conservation", f"t={state.t}: drift {drift:.3e}")
    if partition.num_classes == 1:
        rows = np.abs(state.estimates[0].sum(axis=1) - 1.0).max()
        if rows > INVARIANT_TOL:
            raise InvariantViolation("estimate-row-sum", f"t={state.t}: deviation {rows:.3e}")


class Experiment:
    """A fully built experiment: game, partition, graph, weights and target."""

    def __init__(self, cfg: ExperimentConfig, solve_target: bool = True):
        self.cfg = cfg
        rngs = cfg.rngs()
        self.rng_tiebreak = rngs["tiebreak"]
        self.game, self.potential = build_game(cfg, rngs["costs"])
        self.partition = build_partition(cfg, self.game.n)
        self.graph, self.graph_info = build_graph(cfg, self.game.n, rngs["graph"])
        self.actions0 = initial_actions(cfg.initial_actions, self.game.n, self.game.m, rngs["initial"])
        self.weights = None
        self.lam = math.nan
        if cfg.algorithm == "ecfp-distributed":
            w = build_weights(cfg, self.graph, self.game.n)
            self.weights = check_weight_matrix(w, self.graph)
            self.lam = spectral_contraction(self.weights) if self.game.n > 1 else 0.0
        self.cne = self.cne_residual = None
        if solve_target and isinstance(self.game, cg.CongestionGame):
            opts = dict(cfg.cne)
            try:
                self.cne, self.cne_residual = solve_cne(self.game, **opts)
            except ConvergenceError as exc:
                log.warning("no verified consensus equilibrium: %s", exc)
        self.metrics = Metrics(self.game, self.partition, self.cne)
        self.epsilon = cfg.gap_epsilon if cfg.gap_epsilon is not None else _default_epsilon(self.game)

    def states(self):
        cfg, game = self.cfg, self.game
        rng = self.rng_tiebreak
        if cfg.algorithm == "ecfp-distributed":
            yield from run_distributed(game, self.partition, self.weights, cfg.horizon, self.actions0,
                                       cfg.tie_break, rng, cfg.workers)
        elif cfg.algorithm == "fp":
            state = initial_state(self.actions0, game.m, PartitionSpec.singleton(game.n))
            yield state
            for _ in range(cfg.horizon - 1):
                state = fp_step(state, game, cfg.tie_break, rng)
                yield state
        else:
            yield from run_centralized(game, self.partition, cfg.horizon, self.actions0,
                                       cfg.tie_break, rng, cfg.workers)

    def _recorded(self, t: int) -> bool:
        c = self.cfg.cadence
        return t <= int(c.get("dense_until", 0)) or t % int(c.get("every", 1)) == 0 \
            or t == self.cfg.horizon

    def run(self, on_record=None):
        """Run to the horizon; returns ``(records, summary)``."""
        start = time.perf_counter()
        records = []
        scale = float(np.max(self.game.n / self.partition.sizes()))
        above = 0
        steps = 0
        first_hit = None
        states = self.states()
        while True:
            try:
                state = next(states)
            except StopIteration:
                break
            except ECFPError as exc:
                raise RunError(steps + 1, exc) from exc
            gap, util = self.metrics.gap_and_utility(state.centroids)
            dist = self.metrics.distance(state)
            err = bound = math.nan
            if state.estimates is not None:
                err, bound = check_tracking(state, self.lam, scale)
                check_conservation(state, self.partition)
            steps += 1
            above += gap > self.epsilon
            if first_hit is None and dist <= self.cfg.threshold:
                first_hit = state.t
            if self._recorded(state.t):
                rec = TrajectoryRecord(state.t, gap, dist, util, err, bound, state.centroids.copy())
                records.append(rec)
                if on_record is not None:
                    on_record(rec)
            last = (state.t, gap, dist)
        summary = {
            "algorithm": self.cfg.algorithm,
            "n": self.game.n,
            "m": self.game.m,
            "horizon": self.cfg.horizon,
            "final_t": last[0] if steps else 0,
            "final_gap": last[1] if steps else math.nan,
            "final_dist": last[2] if steps else math.nan,
            "threshold": self.cfg.threshold,
            "steps_to_threshold": first_hit,
            "gap_epsilon": self.epsilon,
            "fraction_gap_above_epsilon": above / steps if steps else math.nan,
            "avg_degree": self.graph.average_degree if self.graph is not None else None,
            "radius": self.graph_info.get("radius"),
            "lambda": None if math.isnan(self.lam) else self.lam,
            "cne": None if self.cne is None else [float(x) for x in self.cne],
            "cne_residual": self.cne_residual,
            "wall_clock_s": time.perf_counter() - start,
        }
        return records, summary


def run_experiment(cfg: ExperimentConfig, on_record=None):
    """Build and run ``cfg``; returns ``(records, summary)``."""
    return Experiment(cfg).run(on_record)


# --- CSV ----------------------------------------------------------------------

CSV_HEADER = "t,gap,dist_cne,centroid_utility,max_est_err,err_bound"


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def emit_csv(records, path) -> None:
    """Write records with 12 significant digits; output is byte-stable."""
    lines = [CSV_HEADER]
    for r in records:
        lines.append(",".join([str(int(r.t)), _fmt(r.gap), _fmt(r.dist_cne), _fmt(r.centroid_utility),
                               _fmt(r.max_est_err), _fmt(r.err_bound)]))
    try:
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc.strerror}") from exc


def read_csv(path) -> list[TrajectoryRecord]:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        out = []
        for line in fh:
            if not line.strip():
                continue
            t, *vals = line.strip().split(",")
            out.append(TrajectoryRecord(int(t), *(float(v) for v in vals)))
    return out
