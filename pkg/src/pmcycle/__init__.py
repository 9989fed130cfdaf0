"""Persistent monitoring with bilevel cycle optimization.

A single agent repeatedly visits a sequence of targets whose uncertainty
grows when unobserved.  Each visit is a minimum-time draining problem solved
by direct multiple shooting; an outer coordinator tunes the boundary angles
of every visit by gradient descent using the draining duals.
"""

from .baseline import BaselineResult, run_greedy_baseline
from .coordinator import (
    BilevelOptions,
    BilevelResult,
    BoundaryAngles,
    cycle_gradient,
    epsilon_annulus,
    fd_cycle_gradient,
    initialize_angles,
    run_bilevel,
)
from .draining import (
    DrainingProblem,
    DrainingSolution,
    greedy_closed_form,
    solve_draining,
    verify_solution,
)
from .model import (
    AgentState,
    Scenario,
    ScenarioError,
    TargetSpec,
    greedy_threshold,
    inner_radius,
    validate_scenario,
)
from .nlp import NlpOptions, NlpProblem, solve_nlp

__all__ = [
    "AgentState", "BaselineResult", "BilevelOptions", "BilevelResult", "BoundaryAngles", "DrainingProblem",
    "DrainingSolution", "NlpOptions", "NlpProblem", "Scenario", "ScenarioError", "TargetSpec", "cycle_gradient",
    "epsilon_annulus", "fd_cycle_gradient", "greedy_closed_form", "greedy_threshold", "initialize_angles",
    "inner_radius", "run_bilevel", "run_greedy_baseline", "solve_draining", "solve_nlp", "validate_scenario",
    "verify_solution",
]
__version__ = "0.1.0"
