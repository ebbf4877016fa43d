"""Global optimization over ReLU trajectory stacks by branch and bound."""

from .bnb import (
    VerifierConfig,
    VerifierOutcome,
    VerifierStatus,
    complement_roots,
    max_dV,
    max_V_successor,
    min_V_boundary,
    write_node_log,
)
from .relax import QuadraticTrajectoryProblem

__all__ = [
    "VerifierConfig",
    "VerifierOutcome",
    "VerifierStatus",
    "QuadraticTrajectoryProblem",
    "complement_roots",
    "max_dV",
    "max_V_successor",
    "min_V_boundary",
    "write_node_log",
]
