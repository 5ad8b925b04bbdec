"""Shape template constructors for library building and pipeline tests.

Each template is a closed CCW polygon drawn inside a width x height box.
Design-scale templates sit on the spacer (z = 0 at the box bottom);
image-scale templates are drawn anywhere in the period x period window.
"""
from __future__ import annotations

import numpy as np

from .geometry import Design, LayerStack, MaterialParams, Polygon


def make_rectangle(cx: float, cz: float, width: float, height: float) -> Polygon:
    w2, h2 = width / 2.0, height / 2.0
    return Polygon(
        [
            (cx - w2, cz - h2),
            (cx + w2, cz - h2),
            (cx + w2, cz + h2),
            (cx - w2, cz + h2),
        ]
    )


def make_cross(
    cx: float, cz: float, width: float, height: float, bar_frac: float = 0.5
) -> Polygon:
    """Plus shape: vertical bar width and horizontal bar height are
    bar_frac of the bounding box."""
    w2, h2 = width / 2.0, height / 2.0
    vw = bar_frac * w2  # half-width of the vertical bar
    hh = bar_frac * h2  # half-height of the horizontal bar
    return Polygon(
        [
            (cx - vw, cz - h2),
            (cx + vw, cz - h2),
            (cx + vw, cz - hh),
            (cx + w2, cz - hh),
            (cx + w2, cz + hh),
            (cx + vw, cz + hh),
            (cx + vw, cz + h2),
            (cx - vw, cz + h2),
            (cx - vw, cz + hh),
            (cx - w2, cz + hh),
            (cx - w2, cz - hh),
            (cx - vw, cz - hh),
        ]
    )


def make_ellipse(
    cx: float, cz: float, width: float, height: float, n_vertices: int = 64
) -> Polygon:
    t = np.linspace(0.0, 2.0 * np.pi, n_vertices, endpoint=False)
    return Polygon(
        np.column_stack([cx + 0.5 * width * np.cos(t), cz + 0.5 * height * np.sin(t)])
    )


def make_bowtie(
    cx: float, cz: float, width: float, height: float, neck_frac: float = 0.3
) -> Polygon:
    """Hourglass lying on its side: full height at both ends, pinched to
    neck_frac of the height at the center."""
    w2, h2 = width / 2.0, height / 2.0
    nk = neck_frac * h2
    return Polygon(
        [
            (cx - w2, cz - h2),
            (cx, cz - nk),
            (cx + w2, cz - h2),
            (cx + w2, cz + h2),
            (cx, cz + nk),
            (cx - w2, cz + h2),
        ]
    )


def template_polygon(tag: str, cx: float, cz: float, width: float, height: float,
                     **kwargs) -> Polygon:
    makers = {
        "ribbon": make_rectangle,
        "square": make_rectangle,
        "cross": make_cross,
        "ellipse": make_ellipse,
        "bow-tie": make_bowtie,
    }
    if tag not in makers:
        raise ValueError(f"unknown template {tag!r}; choose from {sorted(makers)}")
    if tag == "square":
        height = width
    return makers[tag](cx, cz, width, height, **kwargs)


TEMPLATE_TAGS = ("ribbon", "square", "cross", "ellipse", "bow-tie")

# Stack used for template designs: taller resonator band than the bare
# default so profiled shapes (cross, ellipse, bow-tie) have room.
DESIGN_LAYERS = LayerStack(resonator_thickness=0.4)


def template_design(
    tag: str,
    width: float,
    height: float | None = None,
    period: float = 3.2,
    layers: LayerStack | None = None,
    material_params: MaterialParams | None = None,
    **kwargs,
) -> Design:
    """Build a single-resonator design from a template, centered in x and
    resting on the spacer."""
    layers = layers if layers is not None else DESIGN_LAYERS
    t_r = layers.resonator_thickness
    if tag == "square":
        height = width
        if height > t_r:
            raise ValueError(f"square side {width} exceeds resonator layer {t_r}")
    h = height if height is not None else t_r
    if h > t_r + 1e-12:
        raise ValueError(f"template height {h} exceeds resonator layer {t_r}")
    poly = template_polygon(tag, period / 2.0, h / 2.0, width, h, **kwargs)
    return Design(period=period, layers=layers, resonators=[poly],
                  material_params=material_params)


def reference_cross_design(width: float = 2.2) -> Design:
    """The cross design used as the standing regression reference.

    Bars at 0.7 of the bounding box keep every feature comfortably above
    the 250 nm fabrication limit, so the minimum-feature projection only
    rounds corners instead of thinning arms.
    """
    return template_design("cross", width=width, height=0.4, bar_frac=0.7)
