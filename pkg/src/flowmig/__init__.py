"""Delay-aware flow migration for service function chains.

The usual entry point is :func:`flowmig.pipeline.solve_interval`, which
builds the single-interval problem, reformulates it as a mixed-integer
conic program, solves it by branch-and-bound and restores the exact M/M/1
delays.
"""

from .bnb import BnbParams, MiqcpSolution, branch_select, solve_miqcp
from .convex import ConeProgram, ConeSolution, ToleranceConfig, solve_cone
from .formulation import (
    MiqcpModel,
    ObjectiveBreakdown,
    ProblemP1,
    Solution,
    Violation,
    Weights,
    build_p1,
    check_feasibility,
    objective_value,
    transform_to_miqcp,
)
from .model import (
    Instance,
    InstanceError,
    MappingDelta,
    MappingState,
    derive_mapping_delta,
    load_instance,
    load_mapping,
)
from .pipeline import IntervalResult, solve_interval
from .postprocess import postprocess, postprocess_optimum

__all__ = [
    "BnbParams", "ConeProgram", "ConeSolution", "Instance", "InstanceError", "IntervalResult",
    "MappingDelta", "MappingState", "MiqcpModel", "MiqcpSolution", "ObjectiveBreakdown", "ProblemP1",
    "Solution", "ToleranceConfig", "Violation", "Weights", "branch_select", "build_p1",
    "check_feasibility", "derive_mapping_delta", "load_instance", "load_mapping", "objective_value",
    "postprocess", "postprocess_optimum", "solve_cone", "solve_interval", "solve_miqcp",
    "transform_to_miqcp",
]
