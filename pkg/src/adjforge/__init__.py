"""adjforge: inverse-design workbench for MIM metasurface absorbers.

A retrieval-based global search proposes a design for a target absorption
spectrum; an adjoint shape optimizer refines its resonator boundary on a 2D
frequency-domain solver.
"""

__version__ = "0.1.0"

from .adjoint import FomSpec, ShapeGradient, fom, shape_gradient, solve_adjoint
from .generator import GeneratorHandle, Library, LorentzPeak, TargetSpec, generate
from .geometry import (
    Design,
    DesignImage,
    LayerStack,
    MaterialParams,
    Polygon,
    compose_supercell,
    design_to_image,
    image_channels_to_params,
    rasterize,
    resample_polygon,
    signed_area,
)
from .imagepipe import canny_edges, hough_lines, image_to_polygons, median_filter
from .optimizer import OptimConfig, OptimResult, optimize, project_constraints, step
from .solver import (
    FieldMap,
    PermittivityMap,
    SimGrid,
    Spectrum,
    absorption_spectrum,
    build_permittivity,
    drude_permittivity,
    reflection,
    solve_forward,
)

__all__ = [name for name in dir() if not name.startswith("_")]
