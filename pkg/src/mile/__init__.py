"""Decentralized nonconvex optimization with multiple local updates (MILE)."""

from .core import RunConfig, RunResult, TraceRecord, initialize, message_size_accounting, run, step
from .errors import MileError
from .problems import HeteroQuadratic, NoiseModel, NonconvexLogistic, SoftmaxRegression, make_problem
from .topology import build_metropolis_weights, effective_matrix, make_topology, ring

__all__ = [
    "HeteroQuadratic", "MileError", "NoiseModel", "NonconvexLogistic", "RunConfig", "RunResult",
    "SoftmaxRegression", "TraceRecord", "build_metropolis_weights", "effective_matrix", "initialize",
    "make_problem", "make_topology", "message_size_accounting", "ring", "run", "step",
]

__version__ = "0.1.0"
