"""Empirical centroid fictitious play for large potential games."""
from .congestion import CongestionGame, CostPolynomial
from .consensus import Graph, metropolis_hastings_weights, spectral_contraction
from .errors import CapacityError, ConvergenceError, GenerationError, InvalidArgument, InvariantViolation
from .game import MixedStrategy, PotentialTable, TabularGame
from .learning import LearnerState, PartitionSpec

__version__ = "0.1.0"
