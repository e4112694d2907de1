"""Experiment configuration (a single JSON document).

Example::

    {
      "game": {"type": "congestion", "n": 50, "channels": 10, "degree": 2},
      "algorithm": "ecfp-distributed",
      "horizon": 5000,
      "graph": {"type": "geometric", "target_degree": 8.04},
      "seed": 2024
    }

See README.md for every key.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .. import congestion as cg
from ..consensus import (
    Graph,
    geometric_graph_with_degree,
    geometric_random_graph,
    metropolis_hastings_weights,
    read_edge_list,
    read_weights_csv,
    uniform_weights,
)
from ..errors import InvalidArgument
from ..game import PotentialTable, TabularGame
from ..learning import TIE_RULES, PartitionSpec

ALGORITHMS = ("fp", "ecfp", "ecfp-generalized", "ecfp-distributed")


class ConfigError(InvalidArgument):
    """Malformed or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    game: dict
    algorithm: str = "ecfp"
    horizon: int = 1000
    partition: Any = None
    graph: dict | None = None
    weights: Any = "metropolis"
    seed: int = 0
    tie_break: str = "lowest"
    initial_actions: Any = "uniform"
    cadence: dict = field(default_factory=lambda: {"dense_until": 100, "every": 10})
    workers: int = 1
    cne: dict = field(default_factory=dict)
    threshold: float = 0.1
    gap_epsilon: float | None = None
    base_dir: str = "."

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not isinstance(self.horizon, int) or self.horizon < 1:
            raise ConfigError("horizon must be an integer >= 1")
        if self.tie_break not in TIE_RULES:
            raise ConfigError(f"tie_break must be one of {TIE_RULES}")
        if self.algorithm == "ecfp-distributed" and self.graph is None and self.weights in (None, "metropolis"):
            raise ConfigError("the distributed algorithm needs a graph")
        if self.algorithm == "ecfp-generalized" and not isinstance(self.partition, list):
            raise ConfigError("ecfp-generalized needs an explicit partition (list of classes)")
        if not isinstance(self.game, dict) or "type" not in self.game:
            raise ConfigError("game must be an object with a 'type'")
        if isinstance(self.cadence, int):
            self.cadence = {"dense_until": 0, "every": self.cadence}
        if int(self.cadence.get("every", 1)) < 1:
            raise ConfigError("cadence.every must be >= 1")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, data: dict, base_dir: str = ".") -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = set(cls.__dataclass_fields__) - {"base_dir"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data, base_dir=base_dir)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))

    # Independent streams so that, e.g., changing the graph does not change costs.
    def rngs(self) -> dict[str, np.random.Generator]:
        names = ("costs", "graph", "initial", "tiebreak")
        seqs = np.random.SeedSequence(self.seed).spawn(len(names))
        return {k: np.random.default_rng(s) for k, s in zip(names, seqs)}

    def _path(self, p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)


def build_game(cfg: ExperimentConfig, rng: np.random.Generator):
    """Returns ``(game, potential_or_None)``."""
    spec = cfg.game
    kind = spec["type"]
    if kind == "congestion":
        try:
            n = int(spec["n"])
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError("congestion game needs an integer 'n'") from exc
        if "coefficients" in spec:
            channels = [cg.CostPolynomial(tuple(c)) for c in spec["coefficients"]]
        else:
            m = int(spec.get("channels", 10))
            degree = int(spec.get("degree", 3))
            cost_rng = np.random.default_rng(spec["cost_seed"]) if "cost_seed" in spec else rng
            channels = cg.random_costs(cost_rng, m, degree)
        return cg.CongestionGame(n, channels), None
    if kind == "tabular":
        if "utilities" in spec:
            game = TabularGame(np.array(spec["utilities"], dtype=float),
                               identical_interest=bool(spec.get("identical_interest", False)))
        elif "common" in spec:
            game = TabularGame.identical(np.array(spec["common"], dtype=float))
        else:
            raise ConfigError("tabular game needs 'utilities' or 'common'")
        potential = PotentialTable(np.array(spec["potential"])) if "potential" in spec else None
        if potential is None and game.identical_interest:
            potential = PotentialTable(game.utilities[0])
        return game, potential
    raise ConfigError(f"unknown game type {kind!r}")


def build_partition(cfg: ExperimentConfig, n: int) -> PartitionSpec:
    p = cfg.partition
    if p is None:
        p = "singleton" if cfg.algorithm == "fp" else "single"
    if p == "single":
        return PartitionSpec.single(n)
    if p == "singleton":
        return PartitionSpec.singleton(n)
    if isinstance(p, list):
        return PartitionSpec.from_classes(p, n)
    raise ConfigError(f"partition must be 'single', 'singleton' or a list of classes, got {p!r}")


def build_graph(cfg: ExperimentConfig, n: int, rng: np.random.Generator) -> tuple[Graph | None, dict]:
    """Returns the graph (or ``None``) and descriptive info such as the radius."""
    spec = cfg.graph
    if spec is None:
        return None, {}
    kind = spec.get("type", "geometric")
    seed = spec.get("seed", rng)
    retries = int(spec.get("max_retries", 100))
    if kind == "geometric":
        if "target_degree" in spec:
            g, radius = geometric_graph_with_degree(n, float(spec["target_degree"]), seed, retries)
        elif "radius" in spec:
            radius = float(spec["radius"])
            g = geometric_random_graph(n, radius, seed, retries)
        else:
            raise ConfigError("geometric graph needs 'target_degree' or 'radius'")
        return g, {"radius": radius}
    if kind == "complete":
        return Graph.complete(n), {}
    if kind == "edges":
        return Graph(n, np.array(spec["edges"], dtype=int).reshape(-1, 2)), {}
    if kind == "edge_file":
        g = read_edge_list(cfg._path(spec["path"]))
        if g.n != n:
            raise ConfigError(f"graph file has {g.n} nodes, game has {n} players")
        return g, {}
    raise ConfigError(f"unknown graph type {kind!r}")


def build_weights(cfg: ExperimentConfig, graph: Graph | None, n: int) -> np.ndarray:
    """Weight matrix as configured.  Not validated here; see ``check_weight_matrix``."""
    w = cfg.weights
    if w in (None, "metropolis"):
        if graph is None:
            raise ConfigError("Metropolis-Hastings weights need a graph")
        return metropolis_hastings_weights(graph)
    if w == "uniform":
        return uniform_weights(n)
    if isinstance(w, dict) and "matrix" in w:
        return np.array(w["matrix"], dtype=float)
    if isinstance(w, dict) and "csv" in w:
        return read_weights_csv(cfg._path(w["csv"]))
    raise ConfigError(f"unrecognised weights specification {w!r}")
