"""Space-time DG model reduction with implicit feature tracking.

A nodal discontinuous Galerkin discretization of parametrized
conservation laws on a deformable reference mesh, reduced-order
modeling that optimizes jointly over state and domain-deformation
coordinates, empirical-quadrature hyperreduction trained by linear
programming, and a greedy sampling driver.
"""

from .conslaw import (
    BoundaryCondition,
    ConservationLawSpec,
    burgers_spacetime,
    linear_advection,
    make_law,
    transform_flux_source,
)
from .dg import (
    DegenerateMappingError,
    HdmState,
    assemble_global,
    elemental_residual,
    solve_hdm,
)
from .distortion import DistortionConfig, elemental_distortion
from .geometry import Geometry, get_geometry
from .meshing import (
    AssemblyMaps,
    DomainMapping,
    ReferenceMesh,
    build_assembly_maps,
    build_structured_mesh,
    load_mesh,
    mapping_eval,
    save_mesh,
)
from .quadrature import QuadratureRule, interval_rule, triangle_rule

__version__ = "0.1.0"
