"""P1 finite elements for Neumann boundary control of non-coercive elliptic equations.

Modules: ``domain`` (polygons and corner data), ``mesh`` (graded
newest-vertex-bisection meshes), ``coeffs`` (coefficients and the
manufactured L-shape example), ``assembly``, ``solver``, ``ocp`` (the
discrete control problem) and ``analysis`` (error norms, EOC tables,
coercivity probe, convergence studies).
"""
from .analysis import EocTable, ErrorRecord, StudyConfig, coercivity_probe, run_convergence_study
from .assembly import assemble_mass, assemble_state, assemble_system
from .coeffs import CoefficientSet, ManufacturedCase, make_example
from .domain import PolygonDomain, domain_from_preset, make_lshape, make_polygon
from .mesh import GradingSpec, TriMesh, build_graded_mesh, build_mesh_family
from .ocp import OcpConfig, OcpProblem, OcpSolution, solve_box, solve_unconstrained
from .solver import LinearSolveConfig

__version__ = "0.1.0"

__all__ = [
    "CoefficientSet",
    "EocTable",
    "ErrorRecord",
    "GradingSpec",
    "LinearSolveConfig",
    "ManufacturedCase",
    "OcpConfig",
    "OcpProblem",
    "OcpSolution",
    "PolygonDomain",
    "StudyConfig",
    "TriMesh",
    "assemble_mass",
    "assemble_state",
    "assemble_system",
    "build_graded_mesh",
    "build_mesh_family",
    "coercivity_probe",
    "domain_from_preset",
    "make_example",
    "make_lshape",
    "make_polygon",
    "run_convergence_study",
    "solve_box",
    "solve_unconstrained",
]
