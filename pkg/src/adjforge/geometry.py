"""Physical-coordinate polygon and unit-cell data model.

Coordinates are micrometres throughout. The unit cell is a 2D cross-section:
x is the periodic in-plane axis (one period wide), z is the stacking axis.
Resonator polygons live in layer-local coordinates with z = 0 at the top of
the spacer and z bounded by the resonator layer thickness.
"""
from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    AmbiguousEncodingError,
    DegeneratePolygonError,
    IncompatibleCellsError,
    InvalidPolygonError,
    TooFewPointsError,
)

# Coincidence tolerance for consecutive vertices, in um.
VERTEX_EPS = 1e-9

# Linear encoding ranges for the design-image parameter channels.
SPACER_INDEX_RANGE = (1.0, 4.0)
RESONATOR_THICKNESS_RANGE = (0.05, 0.5)

IMAGE_SIZE = 64


def _as_vertex_array(vertices) -> np.ndarray:
    arr = np.asarray(vertices, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidPolygonError(f"expected an (n, 2) vertex array, got shape {arr.shape}")
    return arr


def _drop_degenerate_edges(arr: np.ndarray) -> np.ndarray:
    # Zero-length edges (consecutive duplicates, including the closing edge)
    # are dropped silently during construction.
    keep = [0]
    for i in range(1, len(arr)):
        if np.hypot(*(arr[i] - arr[keep[-1]])) > VERTEX_EPS:
            keep.append(i)
    while len(keep) > 1 and np.hypot(*(arr[keep[-1]] - arr[keep[0]])) <= VERTEX_EPS:
        keep.pop()
    return arr[keep]


def _segments_properly_intersect(p1, p2, p3, p4) -> bool:
    """True when open segments (p1,p2) and (p3,p4) cross at an interior point."""

    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if v > 1e-15:
            return 1
        if v < -1e-15:
            return -1
        return 0

    o1 = orient(p1, p2, p3)
    o2 = orient(p1, p2, p4)
    o3 = orient(p3, p4, p1)
    o4 = orient(p3, p4, p2)
    return o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4)


class Polygon:
    """Closed counterclockwise vertex loop in um coordinates.

    The loop is implicitly closed (the last vertex connects back to the
    first). Construction validates the three invariants: at least three
    distinct vertices, positive signed area, and no edge self-intersection.
    """

    __slots__ = ("vertices", "_key")

    def __init__(self, vertices):
        arr = _drop_degenerate_edges(_as_vertex_array(vertices))
        if len(arr) < 3:
            raise DegeneratePolygonError(
                f"polygon needs at least 3 distinct vertices, got {len(arr)}"
            )
        area = _shoelace(arr)
        if area <= 0.0:
            raise InvalidPolygonError(f"vertices must wind counterclockwise (signed area {area:g})")
        self._check_simple(arr)
        arr.flags.writeable = False
        self.vertices = arr
        self._key = None

    @staticmethod
    def _check_simple(arr: np.ndarray) -> None:
        n = len(arr)
        for i in range(n):
            a, b = arr[i], arr[(i + 1) % n]
            for j in range(i + 1, n):
                if j == i or (j + 1) % n == i or (i + 1) % n == j:
                    continue
                c, d = arr[j], arr[(j + 1) % n]
                if _segments_properly_intersect(a, b, c, d):
                    raise InvalidPolygonError(
                        f"edges {i} and {j} intersect; polygon must be simple"
                    )

    def __len__(self):
        return len(self.vertices)

    def __eq__(self, other):
        return isinstance(other, Polygon) and np.array_equal(self.vertices, other.vertices)

    def __hash__(self):
        if self._key is None:
            self._key = hash(self.vertices.tobytes())
        return self._key

    def __repr__(self):
        return f"Polygon({len(self.vertices)} vertices, area={self.area():.4f} um^2)"

    def area(self) -> float:
        return _shoelace(self.vertices)

    def perimeter(self) -> float:
        d = np.diff(np.vstack([self.vertices, self.vertices[:1]]), axis=0)
        return float(np.hypot(d[:, 0], d[:, 1]).sum())

    def bounds(self):
        """(xmin, zmin, xmax, zmax)."""
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def translated(self, dx: float, dz: float = 0.0) -> "Polygon":
        return Polygon(self.vertices + np.array([dx, dz]))

    def mirrored_x(self, axis_x: float) -> "Polygon":
        """Reflection across the vertical line x = axis_x (re-wound CCW)."""
        ref = self.vertices.copy()
        ref[:, 0] = 2.0 * axis_x - ref[:, 0]
        return Polygon(ref[::-1])

    def contains_points(self, points: np.ndarray) -> np.ndarray:
        return points_in_polygon(points, self.vertices)


def _shoelace(arr: np.ndarray) -> float:
    x, z = arr[:, 0], arr[:, 1]
    return 0.5 * float(np.dot(x, np.roll(z, -1)) - np.dot(z, np.roll(x, -1)))


def signed_area(poly) -> float:
    """Shoelace signed area in um^2; positive iff counterclockwise.

    Accepts a Polygon or a bare (n, 2) vertex array so that orientation can
    be tested before constructing a validated Polygon.
    """
    arr = poly.vertices if isinstance(poly, Polygon) else _as_vertex_array(poly)
    if len(arr) < 3:
        raise DegeneratePolygonError(f"need at least 3 vertices, got {len(arr)}")
    return _shoelace(arr)


def points_in_polygon(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Vectorized crossing-number test for many points against one polygon.

    Points exactly on an edge land on either side depending on rounding;
    callers that care sample away from edges.
    """
    pts = np.asarray(points, dtype=float)
    x, z = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    v0 = vertices
    v1 = np.roll(vertices, -1, axis=0)
    for (x0, z0), (x1, z1) in zip(v0, v1):
        crosses = (z0 > z) != (z1 > z)
        if not crosses.any():
            continue
        xi = (x1 - x0) * (z[crosses] - z0) / (z1 - z0) + x0
        hits = np.zeros(len(pts), dtype=bool)
        hits[crosses] = x[crosses] < xi
        inside ^= hits
    return inside


def resample_polygon(poly: Polygon, spacing: float) -> Polygon:
    """Redistribute vertices along the boundary at roughly uniform spacing.

    Every output vertex lies on the original boundary; consecutive gaps stay
    within [0.5, 1.5] x spacing; orientation is preserved. Corner vertices
    survive unless they are closer than half a spacing to the previous kept
    vertex or nearly collinear with their neighbours.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    perim = poly.perimeter()
    if spacing >= perim / 3.0:
        raise TooFewPointsError(
            f"spacing {spacing:g} um too large for perimeter {perim:g} um"
        )
    verts = poly.vertices
    n = len(verts)

    # Pass 1: subdivide each edge so no gap exceeds 1.5 x spacing.
    pts = []
    corner = []  # original-vertex flag
    for i in range(n):
        a = verts[i]
        b = verts[(i + 1) % n]
        length = float(np.hypot(*(b - a)))
        nsub = max(1, int(round(length / spacing)))
        pts.append(a)
        corner.append(True)
        for j in range(1, nsub):
            pts.append(a + (b - a) * (j / nsub))
            corner.append(False)
    pts = np.array(pts)

    # Pass 2: merge points that crowd below 0.5 x spacing. Nearly collinear
    # original vertices (dense polygonal approximations of curves) merge up
    # to a full spacing so curves come out at ~spacing resolution.
    def turn_angle(prev_pt, pt, next_pt):
        u = pt - prev_pt
        v = next_pt - pt
        cross = u[0] * v[1] - u[1] * v[0]
        dot = u[0] * v[0] + u[1] * v[1]
        return abs(np.arctan2(cross, dot))

    m = len(pts)
    kept = [0]
    arc = 0.0
    for i in range(1, m):
        arc += float(np.hypot(*(pts[i] - pts[i - 1])))
        nxt = pts[(i + 1) % m]
        sharp = corner[i] and turn_angle(pts[kept[-1]], pts[i], nxt) > np.deg2rad(15.0)
        # Nearly collinear chains merge up to ~0.85 spacing of arc so dense
        # curve approximations thin out without losing >1% enclosed area.
        threshold = 0.5 * spacing if sharp else 0.85 * spacing
        gap_after_skip = float(np.hypot(*(nxt - pts[kept[-1]])))
        if arc + 1e-12 >= threshold or gap_after_skip > 1.5 * spacing:
            kept.append(i)
            arc = 0.0
    # keep the closing gap within bounds
    while len(kept) > 3 and np.hypot(*(pts[kept[-1]] - pts[kept[0]])) < 0.5 * spacing:
        kept.pop()
    out = pts[kept]
    if len(out) < 3:
        raise TooFewPointsError("resampling left fewer than 3 vertices")
    return Polygon(out)


@dataclass(frozen=True)
class MaterialParams:
    """Dispersion inputs: constant spacer index plus a Drude metal."""

    spacer_index: float = 1.5
    metal_plasma_freq: float = 1.2e16   # rad/s
    metal_collision_freq: float = 1.2e14  # rad/s

    def __post_init__(self):
        if self.spacer_index < 1.0:
            raise ValueError("spacer_index must be >= 1")
        if self.metal_plasma_freq <= 0.0:
            raise ValueError("metal_plasma_freq must be positive")
        if self.metal_collision_freq < 0.0:
            raise ValueError("metal_collision_freq must be >= 0")


@dataclass(frozen=True)
class LayerStack:
    """MIM stack thicknesses (um) and material roles, bottom to top."""

    ground_thickness: float = 0.2
    spacer_thickness: float = 0.2
    resonator_thickness: float = 0.1
    ground_material: str = "metal"
    spacer_material: str = "spacer"
    resonator_material: str = "metal"

    def __post_init__(self):
        for name in ("ground_thickness", "spacer_thickness", "resonator_thickness"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")


class Design:
    """One periodic unit cell: period, layer stack, materials, resonators.

    Immutable after construction. Resonator polygons are validated to lie
    inside [0, period] x [0, resonator_thickness] and to be pairwise
    disjoint.
    """

    __slots__ = ("period", "layers", "resonators", "material_params", "_key")

    def __init__(self, period=3.2, layers=None, resonators=(), material_params=None):
        if period <= 0:
            raise ValueError("period must be positive")
        self.period = float(period)
        self.layers = layers if layers is not None else LayerStack()
        self.material_params = (
            material_params if material_params is not None else MaterialParams()
        )
        self.resonators = tuple(resonators)
        self._validate()
        self._key = None

    def _validate(self):
        t_r = self.layers.resonator_thickness
        tol = 1e-9
        for k, poly in enumerate(self.resonators):
            x0, z0, x1, z1 = poly.bounds()
            if x0 < -tol or x1 > self.period + tol or z0 < -tol or z1 > t_r + tol:
                raise InvalidPolygonError(
                    f"resonator {k} exceeds the cell bounds "
                    f"[0, {self.period}] x [0, {t_r}]: bbox=({x0:.4f},{z0:.4f},{x1:.4f},{z1:.4f})"
                )
        for i in range(len(self.resonators)):
            for j in range(i + 1, len(self.resonators)):
                if _polygons_overlap(self.resonators[i], self.resonators[j]):
                    raise InvalidPolygonError(f"resonators {i} and {j} overlap")

    def __eq__(self, other):
        return (
            isinstance(other, Design)
            and self.period == other.period
            and self.layers == other.layers
            and self.material_params == other.material_params
            and self.resonators == other.resonators
        )

    def __hash__(self):
        if self._key is None:
            self._key = hash((self.period, self.layers, self.material_params, self.resonators))
        return self._key

    def __repr__(self):
        return (
            f"Design(period={self.period}, {len(self.resonators)} resonator(s), "
            f"n_spacer={self.material_params.spacer_index})"
        )

    def with_resonators(self, resonators) -> "Design":
        return Design(self.period, self.layers, resonators, self.material_params)

    def content_key(self) -> str:
        """Stable content hash used for caching and library manifests."""
        h = hashlib.sha1()
        h.update(np.float64(self.period).tobytes())
        for name in ("ground_thickness", "spacer_thickness", "resonator_thickness"):
            h.update(np.float64(getattr(self.layers, name)).tobytes())
        mp = self.material_params
        for v in (mp.spacer_index, mp.metal_plasma_freq, mp.metal_collision_freq):
            h.update(np.float64(v).tobytes())
        for poly in self.resonators:
            h.update(poly.vertices.tobytes())
        return h.hexdigest()[:16]

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "period_um": self.period,
            "layers": {
                "ground_thickness_um": self.layers.ground_thickness,
                "spacer_thickness_um": self.layers.spacer_thickness,
                "resonator_thickness_um": self.layers.resonator_thickness,
            },
            "material_params": {
                "spacer_index": self.material_params.spacer_index,
                "metal_plasma_freq_rad_s": self.material_params.metal_plasma_freq,
                "metal_collision_freq_rad_s": self.material_params.metal_collision_freq,
            },
            "resonators": [p.vertices.tolist() for p in self.resonators],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Design":
        layers = LayerStack(
            ground_thickness=d["layers"]["ground_thickness_um"],
            spacer_thickness=d["layers"]["spacer_thickness_um"],
            resonator_thickness=d["layers"]["resonator_thickness_um"],
        )
        mp = MaterialParams(
            spacer_index=d["material_params"]["spacer_index"],
            metal_plasma_freq=d["material_params"]["metal_plasma_freq_rad_s"],
            metal_collision_freq=d["material_params"]["metal_collision_freq_rad_s"],
        )
        polys = [Polygon(v) for v in d["resonators"]]
        return cls(d["period_um"], layers, polys, mp)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Design":
        return cls.from_dict(json.loads(text))


def _polygons_overlap(a: Polygon, b: Polygon) -> bool:
    ax0, az0, ax1, az1 = a.bounds()
    bx0, bz0, bx1, bz1 = b.bounds()
    if ax1 <= bx0 or bx1 <= ax0 or az1 <= bz0 or bz1 <= az0:
        return False
    va, vb = a.vertices, b.vertices
    for i in range(len(va)):
        p1, p2 = va[i], va[(i + 1) % len(va)]
        for j in range(len(vb)):
            if _segments_properly_intersect(p1, p2, vb[j], vb[(j + 1) % len(vb)]):
                return True
    if a.contains_points(vb[:1])[0] or b.contains_points(va[:1])[0]:
        return True
    return False


# -- rasterization ---------------------------------------------------------


def rasterize_polygons(
    polygons,
    nx: int,
    nz: int,
    width: float,
    height: float,
    subsamples: int = 16,
) -> np.ndarray:
    """Per-cell covered-area fraction of a polygon union on an nx x nz grid.

    The grid spans [0, width] x [0, height]; cell (i, j) covers
    [i*dx, (i+1)*dx] x [j*dz, (j+1)*dz]. Fractions come from subsamples x
    subsamples points per cell, but only for cells a polygon edge passes
    near; cells away from every boundary get their center point's in/out
    value, so fully covered cells are exactly 1 and empty cells exactly 0.

    Returns an array of shape (nx, nz) with values in [0, 1].
    """
    if nx < 1 or nz < 1:
        raise ValueError("grid must have at least one cell per axis")
    if subsamples < 4:
        raise ValueError("need at least 4x4 subsamples per cell")
    dx = width / nx
    dz = height / nz
    frac = np.zeros((nx, nz))
    if not polygons:
        return frac

    # Cells whose value a boundary might affect.
    edge_cells = np.zeros((nx, nz), dtype=bool)
    for poly in polygons:
        v = poly.vertices
        for i in range(len(v)):
            a, b = v[i], v[(i + 1) % len(v)]
            seg = float(np.hypot(*(b - a)))
            nsteps = max(2, int(np.ceil(seg / (0.5 * min(dx, dz)))) + 1)
            ts = np.linspace(0.0, 1.0, nsteps)
            px = a[0] + (b[0] - a[0]) * ts
            pz = a[1] + (b[1] - a[1]) * ts
            ci = np.clip((px / dx).astype(int), 0, nx - 1)
            cj = np.clip((pz / dz).astype(int), 0, nz - 1)
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    ii = np.clip(ci + di, 0, nx - 1)
                    jj = np.clip(cj + dj, 0, nz - 1)
                    edge_cells[ii, jj] = True

    # Interior cells: one center sample decides 0 or 1.
    ci, cj = np.nonzero(~edge_cells)
    if len(ci):
        centers = np.column_stack([(ci + 0.5) * dx, (cj + 0.5) * dz])
        inside = np.zeros(len(centers), dtype=bool)
        for poly in polygons:
            inside |= poly.contains_points(centers)
        frac[ci, cj] = inside.astype(float)

    # Boundary cells: supersample.
    bi, bj = np.nonzero(edge_cells)
    if len(bi):
        s = (np.arange(subsamples) + 0.5) / subsamples
        ox, oz = np.meshgrid(s, s, indexing="ij")
        offs = np.column_stack([ox.ravel(), oz.ravel()])  # in cell units
        pts = np.empty((len(bi) * len(offs), 2))
        pts[:, 0] = ((bi[:, None] + offs[None, :, 0]) * dx).ravel()
        pts[:, 1] = ((bj[:, None] + offs[None, :, 1]) * dz).ravel()
        inside = np.zeros(len(pts), dtype=bool)
        for poly in polygons:
            inside |= poly.contains_points(pts)
        frac[bi, bj] = inside.reshape(len(bi), -1).mean(axis=1)
    return frac


def _clip_to_band(vertices: np.ndarray, z0: float, z1: float):
    """Sutherland-Hodgman clip of a closed loop to the band z0 <= z <= z1."""

    def clip_half(pts, z, keep_ge):
        res = []
        n = len(pts)
        for i in range(n):
            ax, az = pts[i]
            bx, bz = pts[(i + 1) % n]
            a_in = az >= z if keep_ge else az <= z
            b_in = bz >= z if keep_ge else bz <= z
            if a_in:
                res.append((ax, az))
            if a_in != b_in:
                t = (z - az) / (bz - az)
                res.append((ax + t * (bx - ax), z))
        return res

    pts = clip_half([tuple(p) for p in vertices], z0, True)
    if len(pts) >= 3:
        pts = clip_half(pts, z1, False)
    return pts


def exact_fractions(polygons, nx: int, nz: int, width: float, height: float) -> np.ndarray:
    """Exact per-cell covered-area fraction of a polygon union.

    Clips each polygon to every cell row and bins the loop integral
    -sum (z - z0) dx per column, which is the exact area of the polygon
    inside each cell. Unlike supersampling this is smooth to machine
    precision in the vertex coordinates, which the optimizer's line search
    and the finite-difference gradient checks rely on.
    """
    dx = width / nx
    dz = height / nz
    out = np.zeros((nx, nz))
    for poly in polygons:
        v = poly.vertices
        zs = v[:, 1]
        j_lo = max(0, int(np.floor(zs.min() / dz)))
        j_hi = min(nz - 1, int(np.floor((zs.max() - 1e-15) / dz)))
        for j in range(j_lo, j_hi + 1):
            z0, z1 = j * dz, (j + 1) * dz
            pts = _clip_to_band(v, z0, z1)
            n = len(pts)
            if n < 3:
                continue
            for i in range(n):
                xa, za = pts[i]
                xb, zb = pts[(i + 1) % n]
                if xa == xb:
                    continue
                # split the edge at column boundaries, accumulate the
                # signed trapezoid area (z - z0) dx into each column
                ca = xa / dx
                cb = xb / dx
                lo_c = int(np.floor(min(ca, cb)))
                hi_c = int(np.floor(max(ca, cb) - 1e-12))
                lo_c = max(0, min(nx - 1, lo_c))
                hi_c = max(0, min(nx - 1, hi_c))
                for c in range(lo_c, hi_c + 1):
                    u0 = max(min(xa, xb), c * dx)
                    u1 = min(max(xa, xb), (c + 1) * dx)
                    if u1 <= u0:
                        continue
                    t0 = (u0 - xa) / (xb - xa)
                    t1 = (u1 - xa) / (xb - xa)
                    zm = za + 0.5 * (t0 + t1) * (zb - za)
                    seg = (u1 - u0) if xb < xa else -(u1 - u0)
                    out[c, j] += (zm - z0) * seg
    return np.clip(out / (dx * dz), 0.0, 1.0)


def rasterize(design: Design, nx: int, nz: int, subsamples: int = 16) -> np.ndarray:
    """Metal area fraction of the resonator-layer cross-section.

    The raster window is [0, period] x [0, resonator_thickness] with z
    measured up from the top of the spacer, i.e. exactly the resonator
    layer, so composing cells into a supercell and rasterizing equals
    tiling the per-cell rasters horizontally.
    """
    if nx < 8 or nz < 8:
        raise ValueError("rasterize requires nx, nz >= 8")
    return rasterize_polygons(
        design.resonators, nx, nz, design.period,
        design.layers.resonator_thickness, subsamples,
    )


# -- design image ----------------------------------------------------------


@dataclass(frozen=True)
class DesignImage:
    """64 x 64 x 3 image encoding of a design.

    Channel 0 is the rasterized resonator topology; channels 1 and 2 are
    uniform linear encodings of spacer index and resonator thickness.
    """

    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
            raise ValueError(f"expected ({IMAGE_SIZE}, {IMAGE_SIZE}, 3), got {px.shape}")
        if px.min() < -1e-9 or px.max() > 1 + 1e-9:
            raise ValueError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "pixels", np.clip(px, 0.0, 1.0))

    def channel(self, c: int) -> np.ndarray:
        return self.pixels[:, :, c]

    def to_png_bytes(self) -> bytes:
        from PIL import Image

        arr = np.round(self.pixels * 255.0).astype(np.uint8)
        # pixels[row, col] with row 0 at the bottom; PNG rows go top-down
        img = Image.fromarray(arr[::-1, :, :], mode="RGB")
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        return buf.getvalue()

    @classmethod
    def from_png_bytes(cls, data: bytes) -> "DesignImage":
        from PIL import Image

        img = Image.open(io.BytesIO(data)).convert("RGB")
        if img.size != (IMAGE_SIZE, IMAGE_SIZE):
            img = img.resize((IMAGE_SIZE, IMAGE_SIZE))
        arr = np.asarray(img, dtype=float) / 255.0
        return cls(arr[::-1, :, :])


def _encode_linear(value, lo, hi):
    return float(np.clip((value - lo) / (hi - lo), 0.0, 1.0))


def _decode_linear(code, lo, hi):
    return lo + float(code) * (hi - lo)


def design_to_image(design: Design, subsamples: int = 16) -> DesignImage:
    """Encode a design as a 64 x 64 x 3 image.

    Channel 0 holds the topology drawn in the square period x period
    window with isotropic pixels (image row = z, column = x, row 0 at the
    bottom of the resonator window), matching the pixel-to-um scaling the
    image pipeline inverts. Channels 1 and 2 hold the uniform parameter
    encodings.
    """
    topo = rasterize_polygons(
        design.resonators, IMAGE_SIZE, IMAGE_SIZE,
        design.period, design.period, subsamples,
    )
    px = np.zeros((IMAGE_SIZE, IMAGE_SIZE, 3))
    px[:, :, 0] = topo.T  # (x, z) -> (row=z, col=x)
    px[:, :, 1] = _encode_linear(design.material_params.spacer_index, *SPACER_INDEX_RANGE)
    px[:, :, 2] = _encode_linear(
        design.layers.resonator_thickness, *RESONATOR_THICKNESS_RANGE
    )
    return DesignImage(px)


def image_channels_to_params(image: DesignImage, tolerance: float = 0.05):
    """Decode the parameter channels back to material and thickness values.

    Returns (MaterialParams, LayerStack) built from the defaults with the
    decoded spacer index and resonator thickness substituted. A channel
    whose standard deviation exceeds ``tolerance`` cannot be decoded.
    """
    ch1 = image.channel(1)
    ch2 = image.channel(2)
    for c, name in ((ch1, "channel 1"), (ch2, "channel 2")):
        if float(c.std()) > tolerance:
            raise AmbiguousEncodingError(
                f"{name} is not uniform (std {float(c.std()):.3f} > {tolerance})"
            )
    spacer_index = _decode_linear(float(ch1.mean()), *SPACER_INDEX_RANGE)
    thickness = _decode_linear(float(ch2.mean()), *RESONATOR_THICKNESS_RANGE)
    params = MaterialParams(spacer_index=max(1.0, spacer_index))
    layers = LayerStack(resonator_thickness=thickness)
    return params, layers


# -- supercells ------------------------------------------------------------


def compose_supercell(designs) -> Design:
    """Merge unit cells side by side into one supercell design.

    All inputs must share period, layer stack and materials. The i-th
    design's polygons are translated by i periods; the result's period is
    k times the shared period.
    """
    designs = list(designs)
    if not designs:
        raise IncompatibleCellsError("need at least one design")
    first = designs[0]
    for k, d in enumerate(designs[1:], start=1):
        if d.layers != first.layers or d.material_params != first.material_params:
            raise IncompatibleCellsError(f"design {k} has a different stack or materials")
        if abs(d.period - first.period) > 1e-12:
            raise IncompatibleCellsError(f"design {k} has period {d.period} != {first.period}")
    if len(designs) == 1:
        return first
    polys = []
    for k, d in enumerate(designs):
        for p in d.resonators:
            polys.append(p.translated(k * first.period))
    return Design(
        period=first.period * len(designs),
        layers=first.layers,
        resonators=polys,
        material_params=first.material_params,
    )
