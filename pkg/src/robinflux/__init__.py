"""Robin boundary-value laboratory on voxel domains.

Green functions, harmonic measures and total-flow curves for the Laplacian
with Robin, Neumann and Dirichlet boundary conditions on balls and
pre-fractal bumped cubes.
"""

__version__ = "0.1.0"

from .geometry import (
    BoundaryMeasure,
    GridDomain,
    build_ball_domain,
    build_prefractal_domain,
    build_shell_domain,
    surface_measure,
)
from .solve import SolverConfig, SolveReport, cg_solve

__all__ = [
    "BoundaryMeasure",
    "GridDomain",
    "SolveReport",
    "SolverConfig",
    "build_ball_domain",
    "build_prefractal_domain",
    "build_shell_domain",
    "cg_solve",
    "surface_measure",
]
