"""Iterative adjoint shape optimization with line search and constraints.

One iteration: evaluate the shape gradient, displace every vertex along its
outward normal by step * g/max|g|, project the result back onto the
feasible set (minimum feature size via a raster/median/extract round trip,
then resampling, then exact mirror symmetrization), and keep the trial only
if the FOM improved, shrinking the step up to five times otherwise. The
accepted-FOM log is therefore monotone by construction, matching the
evolution plots the workflow is meant to reproduce.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InfeasibleDesignError, InvalidPolygonError, DegeneratePolygonError
from .adjoint import FomSpec, ShapeGradient, shape_gradient
from .geometry import Design, Polygon, rasterize_polygons, resample_polygon
from .imagepipe import median_filter, median_window_for_feature, trace_contours
from .solver import SimGrid

PROJECTION_PITCH = 0.05  # um per raster pixel in the projection round trip
STALL_GRAD_EPS = 1e-8    # below this max |gradient| the run is stalled
MAX_SHRINKS = 5


@dataclass(frozen=True)
class OptimConfig:
    max_iterations: int = 30
    initial_step: float = 0.05   # um
    step_shrink: float = 0.5
    rel_tol: float = 1e-3
    min_feature: float = 0.05    # um
    symmetry: str = "none"       # "none" | "mirror-x"
    spacing: float = 0.1         # um, polygon resampling
    dump_gradients: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (0.0 < self.step_shrink < 1.0):
            raise ValueError("step_shrink must lie in (0, 1)")
        if self.symmetry not in ("none", "mirror-x"):
            raise ValueError("symmetry must be 'none' or 'mirror-x'")
        if self.min_feature <= 0 or self.spacing <= 0 or self.initial_step <= 0:
            raise ValueError("lengths must be positive")


# -- constraint projection ----------------------------------------------------


def _extract_band_polygons(frac: np.ndarray, period: float, height: float,
                           spacing: float) -> list[Polygon]:
    nxp, nzp = frac.shape
    loops = trace_contours(frac.T, 0.5)  # trace wants [row=z, col=x]
    polys = []
    for loop in loops:
        um = (loop + 0.5) * np.array([period / nxp, height / nzp])
        um[:, 0] = np.clip(um[:, 0], 0.0, period)
        um[:, 1] = np.clip(um[:, 1], 0.0, height)
        from .geometry import signed_area

        if signed_area(um) < 0:
            um = um[::-1]
        try:
            poly = Polygon(um)
            polys.append(resample_polygon(poly, spacing))
        except (InvalidPolygonError, DegeneratePolygonError, Exception):
            continue
    return polys


def _maybe_resample(poly: Polygon, spacing: float) -> Polygon:
    """Resample only when vertex gaps drift outside [0.6, 1.4] spacings.

    Rebuilding the vertex chain wobbles the boundary by a few nanometres,
    which would drown the small-step trials of the line search, so steady
    polygons pass through untouched (hysteresis inside the contractual
    [0.5, 1.5] spacing bounds).
    """
    v = poly.vertices
    gaps = np.hypot(*(np.roll(v, -1, axis=0) - v).T)
    if np.all((gaps >= 0.6 * spacing) & (gaps <= 1.4 * spacing)):
        return poly
    return resample_polygon(poly, spacing)


def _min_feature_pass(polygons, config: OptimConfig, period: float,
                      height: float) -> list[Polygon]:
    """Raster -> median -> extract round trip enforcing the minimum
    feature size on the union of polygons.

    With a one-pixel window the median is the identity and the round trip
    would only add raster quantization, so it runs just when the feature
    constraint actually bites (k >= 3); polygons then still get resampled
    and validated by the caller.
    """
    k = median_window_for_feature(config.min_feature, PROJECTION_PITCH)
    min_area = config.min_feature**2
    if k <= 1:
        out = []
        for p in polygons:
            if p.area() >= min_area:
                out.append(_maybe_resample(p, config.spacing))
        return out
    nxp = max(8, int(round(period / PROJECTION_PITCH)))
    nzp = max(1, int(round(height / PROJECTION_PITCH)))
    frac = rasterize_polygons(polygons, nxp, nzp, period, height, subsamples=16)
    filtered = median_filter(frac.T, k).T
    polys = _extract_band_polygons(filtered, period, height, config.spacing)
    return [p for p in polys if p.area() >= min_area]


def _align_cyclic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cyclic shift of b minimizing total distance to a (same length)."""
    n = len(a)
    best_shift, best_cost = 0, np.inf
    for s in range(n):
        cost = float(np.sum(np.hypot(*(a - np.roll(b, -s, axis=0)).T)))
        if cost < best_cost:
            best_cost, best_shift = cost, s
    return np.roll(b, -best_shift, axis=0)


def symmetrize_mirror_x(poly: Polygon, axis_x: float) -> Polygon:
    """Average the polygon with its optimally aligned mirror image.

    The construction is an exact involution, so the output equals its own
    reflection to floating-point roundoff.
    """
    mirrored = poly.mirrored_x(axis_x)
    aligned = _align_cyclic(poly.vertices, mirrored.vertices)
    return Polygon(0.5 * (poly.vertices + aligned))


def _symmetry_pass(polygons, axis_x: float) -> list[Polygon]:
    if len(polygons) == 1:
        return [symmetrize_mirror_x(polygons[0], axis_x)]
    # Pair each polygon with the nearest mirror partner by centroid.
    cents = np.array([p.vertices.mean(axis=0) for p in polygons])
    mirr_cents = cents.copy()
    mirr_cents[:, 0] = 2 * axis_x - mirr_cents[:, 0]
    out: list[Polygon | None] = [None] * len(polygons)
    used = set()
    for i in range(len(polygons)):
        if i in used:
            continue
        d = np.hypot(*(cents - mirr_cents[i]).T)
        j = int(np.argmin(d))
        if j == i:
            out[i] = symmetrize_mirror_x(polygons[i], axis_x)
            used.add(i)
        elif j not in used:
            pi = polygons[i]
            pj_m = polygons[j].mirrored_x(axis_x)
            aligned = _align_cyclic(pi.vertices, pj_m.vertices)
            avg = Polygon(0.5 * (pi.vertices + aligned))
            out[i] = avg
            out[j] = avg.mirrored_x(axis_x)
            used.update((i, j))
        else:
            out[i] = polygons[i]
            used.add(i)
    return [p for p in out if p is not None]


def project_constraints(poly: Polygon, config: OptimConfig, period: float = 3.2,
                        layer_height: float | None = None) -> Polygon:
    """Project one polygon onto the feasible set; returns the largest
    surviving piece. Raises InfeasibleDesignError when the projection
    collapses the polygon below min_feature^2 area."""
    height = layer_height if layer_height is not None else max(p[1] for p in poly.vertices)
    polys = _min_feature_pass([poly], config, period, height)
    if not polys:
        raise InfeasibleDesignError(
            f"projection left no region of area >= {config.min_feature**2:g} um^2"
        )
    out = max(polys, key=lambda p: p.area())
    if config.symmetry == "mirror-x":
        out = symmetrize_mirror_x(out, period / 2.0)
    return out


def project_design(design: Design, config: OptimConfig) -> Design:
    t_r = design.layers.resonator_thickness
    polys = _min_feature_pass(list(design.resonators), config, design.period, t_r)
    if not polys:
        raise InfeasibleDesignError("projection removed every resonator")
    if config.symmetry == "mirror-x":
        polys = _symmetry_pass(polys, design.period / 2.0)
    return design.with_resonators(polys)


# -- stepping ------------------------------------------------------------------


def smooth_gradient(grad: ShapeGradient, strength: float = 6.0) -> ShapeGradient:
    """Sobolev-preconditioned search direction.

    Solves (I - a * D2) v = g per polygon along the cyclic vertex chain,
    diffusing the single-vertex corner spikes of the raw gradient over a
    few neighbours. The operator is symmetric positive definite, so v stays
    an ascent direction; the raw gradient is untouched for verification.
    """
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    vals = []
    for g_poly in grad.values:
        n = len(g_poly)
        if n < 5 or not np.any(g_poly):
            vals.append(g_poly.copy())
            continue
        a = strength
        M = sp.diags(
            [np.full(n, 1.0 + 2.0 * a), np.full(n - 1, -a), np.full(n - 1, -a)],
            [0, 1, -1], format="lil",
        )
        M[0, n - 1] = -a
        M[n - 1, 0] = -a
        vals.append(spla.spsolve(M.tocsc(), g_poly))
    return ShapeGradient(vals, grad.normals, grad.fom_value, grad.design_key)


def _direction_scale(grad: ShapeGradient) -> float:
    """Robust normalization scale: the 95th percentile of |gradient| so a
    few singular corner values cannot freeze every other vertex."""
    mags = np.concatenate([np.abs(v) for v in grad.values]) if grad.values else np.array([0.0])
    if not mags.size or mags.max() == 0.0:
        return 0.0
    p95 = float(np.percentile(mags[mags > 0], 95))
    return p95 if p95 > 0 else float(mags.max())


def _displace(design: Design, grad: ShapeGradient, step_size: float,
              scale: float) -> Design:
    """Move vertices by step_size * clip(g/scale, -1, 1) along the outward
    normals, clamped to the cell bounds."""
    t_r = design.layers.resonator_thickness
    new_polys = []
    for poly, g, n in zip(design.resonators, grad.values, grad.normals):
        amount = np.clip(g / scale, -1.0, 1.0)
        verts = poly.vertices + step_size * amount[:, None] * n
        verts[:, 0] = np.clip(verts[:, 0], 0.0, design.period)
        verts[:, 1] = np.clip(verts[:, 1], 0.0, t_r)
        new_polys.append(Polygon(verts))
    return design.with_resonators(new_polys)


def step(design: Design, grad: ShapeGradient, step_size: float,
         config: OptimConfig | None = None) -> Design:
    """Displace every vertex by step_size * g/max|g| along its outward
    normal, clamped to the cell bounds; projects constraints when a config
    is supplied. A zero gradient returns the design unchanged."""
    gmax = grad.max_abs()
    if gmax == 0.0:
        return design
    moved = _displace(design, grad, step_size, gmax)
    if config is not None:
        moved = project_design(moved, config)
    return moved


# -- optimization loop ---------------------------------------------------------


@dataclass
class IterationRecord:
    index: int
    fom: float
    step_size: float
    accepted: bool
    shrinks: int
    max_gradient: float
    vertices: list  # per-polygon vertex lists of the accepted design

    def to_dict(self):
        return asdict(self)


@dataclass
class OptimResult:
    initial_design: Design
    final_design: Design
    initial_fom: float
    final_fom: float
    termination: str  # "converged" | "max-iter" | "stalled"
    iterations: list = field(default_factory=list)
    config: OptimConfig = field(default_factory=OptimConfig)
    gradients: list = field(default_factory=list)  # JSON strings per iteration

    @property
    def delta_fom(self) -> float:
        return self.final_fom - self.initial_fom

    def accepted_foms(self):
        return [self.initial_fom] + [r.fom for r in self.iterations if r.accepted]

    def save(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.json"), "w") as f:
            json.dump(
                {
                    **asdict(self.config),
                    "termination": self.termination,
                    "initial_fom": self.initial_fom,
                    "final_fom": self.final_fom,
                    "delta_fom": self.delta_fom,
                },
                f, indent=2,
            )
        with open(os.path.join(out_dir, "iterations.jsonl"), "w") as f:
            for rec in self.iterations:
                f.write(json.dumps(rec.to_dict()) + "\n")
        with open(os.path.join(out_dir, "design_initial.json"), "w") as f:
            f.write(self.initial_design.to_json())
        with open(os.path.join(out_dir, "design_final.json"), "w") as f:
            f.write(self.final_design.to_json())
        if self.config.dump_gradients:
            for i, g in enumerate(self.gradients, start=1):
                with open(os.path.join(out_dir, f"gradient_{i:03d}.json"), "w") as f:
                    f.write(g)


def optimize(
    design: Design,
    spec: FomSpec,
    config: OptimConfig | None = None,
    grid: SimGrid | None = None,
    workers: int = 1,
    on_event=None,
) -> OptimResult:
    """Run the adjoint shape optimization loop.

    Emits {"kind": "iteration", ...} events through on_event after every
    iteration so a monitor can stream progress. The accepted-FOM sequence
    is non-decreasing; termination is 'converged' on relative FOM
    stagnation over three accepted iterations, 'max-iter', or 'stalled'
    when the gradient vanishes or no shrink of the step improves the FOM.
    """
    config = config or OptimConfig()
    if grid is None:
        grid = SimGrid.for_design(design)
    if config.min_feature < grid.dx - 1e-12:
        raise ValueError(
            f"min_feature {config.min_feature} below grid dx {grid.dx}"
        )

    current = project_design(design, config)  # may raise InfeasibleDesignError
    iterations: list[IterationRecord] = []
    gradients: list[str] = []

    def emit(rec: IterationRecord):
        if on_event is not None:
            on_event({"kind": "iteration", **rec.to_dict()})

    grad = shape_gradient(current, spec, grid, workers=workers)
    current_fom = grad.fom_value
    initial_design, initial_fom = current, current_fom
    step_size = config.initial_step
    termination = "max-iter"
    accepted = [current_fom]

    for it in range(1, config.max_iterations + 1):
        gmax = grad.max_abs()
        if gmax < STALL_GRAD_EPS:
            termination = "stalled"
            break
        if config.dump_gradients:
            gradients.append(grad.to_json())
        direction = smooth_gradient(grad)
        scale = _direction_scale(direction)
        if scale == 0.0:
            termination = "stalled"
            break

        improved = False
        shrinks = 0
        trial_step = step_size
        trial = None
        trial_grad = None
        while shrinks <= MAX_SHRINKS:
            try:
                candidate = project_design(
                    _displace(current, direction, trial_step, scale), config
                )
                cand_grad = shape_gradient(candidate, spec, grid, workers=workers)
            except (InfeasibleDesignError, InvalidPolygonError, DegeneratePolygonError):
                cand_grad = None
            if cand_grad is not None and cand_grad.fom_value > current_fom:
                improved = True
                trial = candidate
                trial_grad = cand_grad
                break
            shrinks += 1
            trial_step *= config.step_shrink

        if not improved:
            rec = IterationRecord(
                index=it, fom=current_fom, step_size=trial_step, accepted=False,
                shrinks=shrinks, max_gradient=gmax,
                vertices=[p.vertices.tolist() for p in current.resonators],
            )
            iterations.append(rec)
            emit(rec)
            termination = "stalled"
            break

        current, current_fom, grad = trial, trial_grad.fom_value, trial_grad
        # carry the working step but let it recover after clean accepts
        step_size = min(config.initial_step, trial_step * (2.0 if shrinks == 0 else 1.0))
        accepted.append(current_fom)
        rec = IterationRecord(
            index=it, fom=current_fom, step_size=step_size, accepted=True,
            shrinks=shrinks, max_gradient=gmax,
            vertices=[p.vertices.tolist() for p in current.resonators],
        )
        iterations.append(rec)
        emit(rec)

        if len(accepted) >= 4 and (
            accepted[-1] - accepted[-4] < config.rel_tol * max(accepted[-1], 1e-12)
        ):
            termination = "converged"
            break

    return OptimResult(
        initial_design=initial_design,
        final_design=current,
        initial_fom=initial_fom,
        final_fom=current_fom,
        termination=termination,
        iterations=iterations,
        config=config,
        gradients=gradients,
    )
