"""Minimum-compliance truss design with an upper bound on the number of nodes."""

from .admm import AdmmParams, admm_solve, initial_point, post_process, project_cardinality, run_until_convergence
from .ground import GroundStructure, TrussDesign, detect_overlaps, hinge_cancel
from .misocp import BnbOptions, branch_and_bound, build_member_model, build_node_model
from .models import (
    ProblemSpec,
    build_min_compliance,
    build_x_update,
    evaluate_compliance,
    paper_instance,
    solve_min_compliance,
)

__all__ = [
    "AdmmParams",
    "BnbOptions",
    "GroundStructure",
    "ProblemSpec",
    "TrussDesign",
    "admm_solve",
    "branch_and_bound",
    "build_member_model",
    "build_min_compliance",
    "build_node_model",
    "build_x_update",
    "detect_overlaps",
    "evaluate_compliance",
    "hinge_cancel",
    "initial_point",
    "paper_instance",
    "post_process",
    "project_cardinality",
    "run_until_convergence",
    "solve_min_compliance",
]
