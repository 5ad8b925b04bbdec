"""Shared fixtures: reference designs and a session-scoped ribbon library.

The gradient-check designs keep every polygon edge on half-cell lines of
the 25 nm solver lattice: central differences straddle a kink whenever an
edge sits on a lattice line, so the reference geometry stays clear of
them. Bottom edges rest on the spacer, where vertices are clamped anyway.
"""
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from adjforge.geometry import (
    Design,
    LayerStack,
    Polygon,
    compose_supercell,
    resample_polygon,
)
from adjforge.generator import build_library
from adjforge.spectra import default_solve_wavelengths
from adjforge.templates import reference_cross_design, template_design


def make_grad_cross() -> Design:
    x0, x1 = 0.5125, 2.7125
    xi0, xi1 = 1.0625, 2.1625
    z0, z1 = 0.0, 0.3625
    zi0, zi1 = 0.1125, 0.2625
    poly = Polygon([
        (xi0, z0), (xi1, z0), (xi1, zi0), (x1, zi0), (x1, zi1), (xi1, zi1),
        (xi1, z1), (xi0, z1), (xi0, zi1), (x0, zi1), (x0, zi0), (xi0, zi0),
    ])
    base = template_design("cross", width=2.2, height=0.3625)
    return base.with_resonators([resample_polygon(poly, 0.1)])


def make_grad_square() -> Design:
    layers = LayerStack(resonator_thickness=0.35)
    poly = Polygon([(1.4625, 0.0), (1.7875, 0.0), (1.7875, 0.3375), (1.4625, 0.3375)])
    return Design(3.2, layers, [resample_polygon(poly, 0.1)])


def make_grad_two_ribbon() -> Design:
    layers = LayerStack(resonator_thickness=0.4)
    r1 = Polygon([(0.9125, 0.0), (2.2875, 0.0), (2.2875, 0.2125), (0.9125, 0.2125)])
    r2 = Polygon([(1.0125, 0.0), (2.1875, 0.0), (2.1875, 0.2125), (1.0125, 0.2125)])
    c1 = Design(3.2, layers, [resample_polygon(r1, 0.1)])
    c2 = Design(3.2, layers, [resample_polygon(r2, 0.1)])
    return compose_supercell([c1, c2])


@pytest.fixture(scope="session")
def grad_cross():
    return make_grad_cross()


@pytest.fixture(scope="session")
def grad_square():
    return make_grad_square()


@pytest.fixture(scope="session")
def grad_two_ribbon():
    return make_grad_two_ribbon()


@pytest.fixture(scope="session")
def reference_cross():
    return reference_cross_design()


RIBBON_WIDTHS = np.round(np.arange(1.0, 2.45, 0.1), 3)
LIBRARY_WAVELENGTHS = default_solve_wavelengths(41)


@pytest.fixture(scope="session")
def ribbon_library(tmp_path_factory):
    """Small ribbon library shared by generator, optimizer and acceptance
    tests (15 widths, 41 solve wavelengths)."""
    out = tmp_path_factory.mktemp("library")
    return build_library(
        str(out),
        templates=["ribbon"],
        sweep={"ribbon": {"width": RIBBON_WIDTHS, "height": [0.2]}},
        wavelengths=LIBRARY_WAVELENGTHS,
    )


def fd_vertex_check(design, spec, grid, delta=0.0005, threshold=0.1, subset=None):
    """Central-difference verification of shape_gradient.

    Returns (worst_rel, worst_abs_smallgrad, n_checked) over the dominant
    vertices (|g| > threshold * max|g|); 'subset' limits to every n-th
    dominant vertex for runtime control.
    """
    from adjforge.adjoint import fom, shape_gradient

    sg = shape_gradient(design, spec, grid)
    gmax = sg.max_abs()
    worst_rel = 0.0
    checked = 0
    for pi, (gv, nm) in enumerate(zip(sg.values, sg.normals)):
        dom = np.nonzero(np.abs(gv) > threshold * gmax)[0]
        if subset:
            dom = dom[::subset]
        verts = design.resonators[pi].vertices
        for k in dom:
            vp = verts.copy()
            vp[k] = vp[k] + delta * nm[k]
            vm = verts.copy()
            vm[k] = vm[k] - delta * nm[k]
            rp = list(design.resonators)
            rp[pi] = Polygon(vp)
            rm = list(design.resonators)
            rm[pi] = Polygon(vm)
            fp = fom(design.with_resonators(rp), spec, grid)
            fm = fom(design.with_resonators(rm), spec, grid)
            fd = (fp - fm) / (2.0 * delta)
            worst_rel = max(worst_rel, abs(fd - gv[k]) / max(abs(fd), 1e-12))
            checked += 1
    return worst_rel, checked
