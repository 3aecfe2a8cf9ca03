"""Finite-element model of wound contraction driven by cellular pulling forces.

Three load models are supported on the same triangulation: point forces on the
cell boundary (immersed), the same with a soft cell interior (adjusted
immersed), and a traction on the boundary of an excised cell (hole).
"""
from .cellmodel import CellSpec, ForceSegment, PolygonApprox, force_segments, polygonize, sample_cells
from .elasticity import (
    DisplacementField,
    LinearSystem,
    MaterialField,
    PointLoad,
    assemble_point_loads,
    assemble_robin,
    assemble_stiffness,
    assemble_traction,
    build_system,
    energy_norm,
    solve,
    strain_energy,
)
from .errors import CellForceError, ConfigError, MeshError, SingularityError, SolverError
from .mesh import (
    BoundaryTag,
    Mesh,
    Region,
    SubdomainSpec,
    generate_cell_conforming_mesh,
    generate_hole_mesh,
    generate_square_mesh,
    locate,
    refine,
)
from .metrics import convergence_rate, deformed_boundary, jacobian_area, reduction_ratio, shoelace_area

__version__ = "0.1.0"
