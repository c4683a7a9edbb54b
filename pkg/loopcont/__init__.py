"""Bifurcation-continuation toolkit for indefinite concave-convex elliptic problems."""

from .config import RunConfig, load_config
from .continuation import Branch, Diagram, trace_branch, whyburn_limit
from .eigen import PrincipalPair, principal_eigs
from .mesh import BoundaryCondition, assemble_laplacian, build_grid
from .nonlin import make_spec, validate_hypotheses
from .nsolve import ProblemContext, deflated_solve, newton_solve
from .scenario_engine import ScenarioEngine, run_scenario
from .weights import sample_weights

__version__ = "0.1.0"

__all__ = [
    "BoundaryCondition", "Branch", "Diagram", "PrincipalPair", "ProblemContext", "RunConfig",
    "ScenarioEngine", "assemble_laplacian", "build_grid", "deflated_solve", "load_config",
    "make_spec", "newton_solve", "principal_eigs", "run_scenario", "sample_weights",
    "trace_branch", "validate_hypotheses", "whyburn_limit",
]
