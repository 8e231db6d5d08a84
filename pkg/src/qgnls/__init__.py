"""Normalized standing waves on metric graphs with nonlinear point defects.

The solver reduces the problem to vertex values and the multiplier ``lam``
(:mod:`qgnls.system`), follows branches (:mod:`qgnls.continuation`), checks
solutions against an independent finite-element discretization
(:mod:`qgnls.field`, :mod:`qgnls.lab`) and treats the ``lam = 0`` vertex
problem (:mod:`qgnls.combinatorial`).
"""

from .graph import MetricGraph, compact_core, load_graph, star, tadpole, two_hub, pendant_star, dumbbell
from .system import (
    CandidateSolution,
    ProblemParams,
    SolutionReport,
    multi_seed,
    newton_solve,
    residual,
    jacobian,
    star_closed_form,
    star_seed,
    verify,
)

__all__ = [
    "MetricGraph", "compact_core", "load_graph", "star", "tadpole", "two_hub", "pendant_star",
    "dumbbell", "CandidateSolution", "ProblemParams", "SolutionReport", "multi_seed",
    "newton_solve", "residual", "jacobian", "star_closed_form", "star_seed", "verify",
]
