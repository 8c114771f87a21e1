"""Optimal convex, rotationally symmetric shapes via a reduced 2D (r-weighted) formulation."""

from convexrot.geometry import GeneratrixBoundary, GeometryError
from convexrot.mesh import TriMesh, MeshError, reference_half_disk, mesh_from_boundary
from convexrot.eigen import EigenSolution, SolverError, dirichlet_eigen, insulation_eigen, neumann_eigen2

__all__ = [
    "GeneratrixBoundary",
    "GeometryError",
    "TriMesh",
    "MeshError",
    "reference_half_disk",
    "mesh_from_boundary",
    "EigenSolution",
    "SolverError",
    "dirichlet_eigen",
    "insulation_eigen",
    "neumann_eigen2",
]

__version__ = "0.1.0"
