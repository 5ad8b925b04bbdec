"""Pixel-format design to discretized polygon conversion.

The pipeline refines a topology image (median filter), extracts the
resonator boundary (Canny), converts it to line coordinates (Hough), links
the segments into closed loops, and interpolates the loops into polygon
points at a user-set spacing. A marching-squares trace of the filtered
image backs up the Hough path whenever linking cannot close a loop.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ExtractionError, InvalidWindowError
from .geometry import Polygon, resample_polygon, signed_area

# Defaults chosen so the template round trip holds on all four shapes.
CANNY_LOW = 0.1
CANNY_HIGH = 0.3
THETA_BINS = 180
RHO_BINS = 128
VOTE_THRESHOLD = 8
LINK_TOL_PX = 2.0

PIXEL_PITCH_DEFAULT = 3.2 / 64  # um per pixel, 64 px per period


def median_window_for_feature(min_feature_um: float, pixel_pitch: float = PIXEL_PITCH_DEFAULT) -> int:
    """Median window size enforcing a minimum feature size.

    k = round(d_min / pixel_pitch), forced odd, so 50 nm maps to k = 1 and
    250 nm to k = 5 at the default 50 nm pitch.
    """
    k = int(round(min_feature_um / pixel_pitch))
    if k % 2 == 0:
        k += 1
    return max(1, k)


def median_filter(image: np.ndarray, k: int) -> np.ndarray:
    """k x k median with edge replication at the borders."""
    if k < 1 or k % 2 == 0:
        raise InvalidWindowError(f"median window must be odd and >= 1, got {k}")
    img = np.asarray(image, dtype=float)
    if k == 1:
        return img.copy()
    return ndimage.median_filter(img, size=k, mode="nearest")


def _sobel_gradients(image: np.ndarray):
    gx = ndimage.sobel(image, axis=1, mode="nearest")
    gz = ndimage.sobel(image, axis=0, mode="nearest")
    return gx, gz


def canny_edges(image: np.ndarray, low: float = CANNY_LOW, high: float = CANNY_HIGH) -> np.ndarray:
    """Canny edge map: Gaussian smooth (sigma 1), Sobel gradients,
    non-maximum suppression, double-threshold hysteresis.

    Thresholds are absolute against the Sobel magnitude of a unit step
    (normalized by 4), so they scale with global image intensity.
    Returns a binary {0, 1} array the same shape as the input.
    """
    img = np.asarray(image, dtype=float)
    if not (0.0 <= low <= high):
        raise ValueError("need 0 <= low <= high")
    smoothed = ndimage.gaussian_filter(img, sigma=1.0, mode="nearest")
    gx, gz = _sobel_gradients(smoothed)
    mag = np.hypot(gx, gz) / 4.0  # unit step across one pixel -> ~1

    # Non-maximum suppression along the signed gradient direction. Ties are
    # broken toward the up-gradient side, so a symmetric two-pixel ridge
    # keeps only its high-intensity (interior) pixel and edge chains sit
    # half a pixel inside the true boundary everywhere.
    sector = np.round(np.arctan2(gz, gx) / (np.pi / 4.0)).astype(int) % 8
    # (drow, dcol) step toward +gradient for each 45 degree sector
    offsets = [(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1)]
    pad = np.pad(mag, 1, mode="constant")

    def shifted(drow, dcol):
        return pad[1 + drow : 1 + drow + mag.shape[0], 1 + dcol : 1 + dcol + mag.shape[1]]

    n_plus = np.zeros_like(mag)
    n_minus = np.zeros_like(mag)
    for s, (drow, dcol) in enumerate(offsets):
        sel = sector == s
        n_plus[sel] = shifted(drow, dcol)[sel]
        n_minus[sel] = shifted(-drow, -dcol)[sel]
    # tolerance keeps exact ties deterministic against fp summation noise
    eq_eps = 1e-9 * float(mag.max() + 1e-30)
    thin = (mag > n_plus + eq_eps) & (mag >= n_minus - eq_eps) & (mag > 0)

    strong = thin & (mag >= high)
    weak = thin & (mag >= low)
    # Hysteresis: keep weak-pixel components that touch a strong pixel.
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return np.zeros_like(img)
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(labels[strong])] = True
    keep[0] = False
    return keep[labels].astype(float)


@dataclass(frozen=True)
class LineSegment:
    """Detected boundary line in pixel coordinates with (rho, theta)
    normal form: rho = x cos(theta) + z sin(theta)."""

    x1: float
    z1: float
    x2: float
    z2: float
    rho: float
    theta: float
    votes: int

    def __post_init__(self):
        if abs(self.x1 - self.x2) < 1e-12 and abs(self.z1 - self.z2) < 1e-12:
            raise ValueError("segment endpoints coincide")

    @property
    def p1(self):
        return np.array([self.x1, self.z1])

    @property
    def p2(self):
        return np.array([self.x2, self.z2])


def hough_lines(
    edges: np.ndarray,
    theta_bins: int = THETA_BINS,
    rho_bins: int = RHO_BINS,
    vote_threshold: int = VOTE_THRESHOLD,
) -> list[LineSegment]:
    """Hough line transform over a binary edge map.

    Accumulator peaks above the vote threshold are de-duplicated within one
    bin along each axis, then clipped to the supporting edge pixels to form
    segments. Pixel (row, col) maps to (x, z) = (col, row).
    """
    if theta_bins < 16 or rho_bins < 16:
        raise ValueError("need at least 16 bins per axis")
    if vote_threshold < 2:
        raise ValueError("vote threshold must be >= 2")
    em = np.asarray(edges)
    rows, cols = np.nonzero(em > 0.5)
    if len(rows) == 0:
        return []
    x = cols.astype(float)
    z = rows.astype(float)
    diag = float(np.hypot(*em.shape))
    thetas = np.linspace(0.0, np.pi, theta_bins, endpoint=False)
    rho_edges = np.linspace(-diag, diag, rho_bins + 1)

    rho_val = x[:, None] * np.cos(thetas)[None, :] + z[:, None] * np.sin(thetas)[None, :]
    rho_idx = np.clip(np.searchsorted(rho_edges, rho_val) - 1, 0, rho_bins - 1)
    acc = np.zeros((theta_bins, rho_bins), dtype=int)
    for t in range(theta_bins):
        acc[t] = np.bincount(rho_idx[:, t], minlength=rho_bins)

    # Iterative peak extraction. A clean line leaves a plateau of equal
    # vote counts (neighbouring theta bins keep all its pixels in one rho
    # bin), so each pick uses the centroid of the connected plateau around
    # the global maximum, then suppresses the whole ridge.
    work = acc.astype(float)
    rho_width = rho_edges[1] - rho_edges[0]
    peaks = []
    while len(peaks) < 32:
        t, r = np.unravel_index(int(np.argmax(work)), work.shape)
        votes = int(work[t, r])
        if votes < vote_threshold:
            break
        plateau = ndimage.label(work == votes)[0]
        mask = plateau == plateau[t, r]
        tt, rr = np.nonzero(mask)
        theta_c = float(np.mean(thetas[tt]))
        rho_c = float(np.mean(0.5 * (rho_edges[rr] + rho_edges[rr + 1])))
        peaks.append((theta_c, rho_c, votes))
        t0, t1 = tt.min() - 4, tt.max() + 5
        r0, r1 = max(0, rr.min() - 2), min(rho_bins, rr.max() + 3)
        work[np.ix_(np.arange(t0, t1) % theta_bins, np.arange(r0, r1))] = -1.0

    segments = []
    for theta, rho, votes in peaks:
        # Gather the support pixels, then refine the line through them:
        # PCA for the direction when the spread is clearly 1D, mean rho
        # always, removing the bin quantization.
        for band in (max(1.0, rho_width), 1.0):
            dist = np.abs(x * np.cos(theta) + z * np.sin(theta) - rho)
            support = dist <= band
            if support.sum() < 2:
                break
            xs, zs = x[support], z[support]
            if support.sum() > 3:
                cov = np.cov(np.vstack([xs - xs.mean(), zs - zs.mean()]))
                evals, evecs = np.linalg.eigh(cov)
                if evals[1] > 4.0 * max(evals[0], 1e-9):
                    ux, uz = evecs[:, 1]
                    theta = float(np.arctan2(-ux, uz)) % np.pi
            rho = float(xs.mean() * np.cos(theta) + zs.mean() * np.sin(theta))
        if support.sum() < 2:
            continue
        proj = -xs * np.sin(theta) + zs * np.cos(theta)
        lo, hi = int(proj.argmin()), int(proj.argmax())
        length = float(np.hypot(xs[hi] - xs[lo], zs[hi] - zs[lo]))
        if length < 1e-9 or votes / (length + 1.0) < 0.5:
            continue  # sparse accidental alignment, not a boundary line
        segments.append(
            LineSegment(
                x1=float(xs[lo]), z1=float(zs[lo]),
                x2=float(xs[hi]), z2=float(zs[hi]),
                rho=rho, theta=float(theta),
                votes=votes,
            )
        )
    # Drop weaker segments that duplicate a stronger line.
    segments.sort(key=lambda s: -s.votes)
    kept: list[LineSegment] = []
    for s in segments:
        dup = False
        for k in kept:
            d1 = abs(s.x1 * np.cos(k.theta) + s.z1 * np.sin(k.theta) - k.rho)
            d2 = abs(s.x2 * np.cos(k.theta) + s.z2 * np.sin(k.theta) - k.rho)
            if max(d1, d2) < 1.5:
                dup = True
                break
        if not dup:
            kept.append(s)
    return kept


def link_segments(segments: list[LineSegment], tol: float = LINK_TOL_PX):
    """Greedy endpoint matching of segments into a closed loop.

    Chains segments by nearest free endpoint within tolerance, then places
    corners at the intersections of consecutive fitted lines (falling back
    to the endpoint midpoint when lines are near-parallel or the
    intersection runs away). Returns an (n, 2) vertex array in pixel
    coordinates, or None when no closed chain exists.
    """
    if len(segments) < 3:
        return None
    remaining = list(range(1, len(segments)))
    chain = [segments[0]]
    head = segments[0].p1
    tail = segments[0].p2
    while remaining:
        best, best_d, flip = None, np.inf, False
        for idx in remaining:
            s = segments[idx]
            d1 = float(np.hypot(*(s.p1 - tail)))
            d2 = float(np.hypot(*(s.p2 - tail)))
            if min(d1, d2) < best_d:
                best, best_d, flip = idx, min(d1, d2), d2 < d1
        if best is None or best_d > tol:
            break
        remaining.remove(best)
        s = segments[best]
        if flip:
            s = LineSegment(s.x2, s.z2, s.x1, s.z1, s.rho, s.theta, s.votes)
        chain.append(s)
        tail = s.p2
    if len(chain) < 3 or float(np.hypot(*(tail - head))) > tol:
        return None

    corners = []
    n = len(chain)
    for i in range(n):
        a, b = chain[i], chain[(i + 1) % n]
        mid = 0.5 * (a.p2 + b.p1)
        det = np.sin(b.theta - a.theta)
        corner = mid
        if abs(det) > np.sin(np.deg2rad(20.0)):
            xc = (a.rho * np.sin(b.theta) - b.rho * np.sin(a.theta)) / det
            zc = (b.rho * np.cos(a.theta) - a.rho * np.cos(b.theta)) / det
            cand = np.array([xc, zc])
            if np.hypot(*(cand - mid)) <= 4.0:
                corner = cand
        corners.append(corner)
    loop = np.array(corners)
    if len(loop) < 3:
        return None
    return loop


def _offset_loop(loop: np.ndarray, d: float) -> np.ndarray:
    """Uniform outward offset of a closed loop by d (miter joins).

    Canny edge chains sit on the interior pixel of each transition, so
    Hough-fitted boundaries run about half a pixel inside the true one;
    offsetting outward by 0.5 px recenters them.
    """
    pts = loop if signed_area(loop) > 0 else loop[::-1]
    e = np.roll(pts, -1, axis=0) - pts
    ln = np.hypot(e[:, 0], e[:, 1])
    ln[ln < 1e-12] = 1.0
    en = np.column_stack([e[:, 1], -e[:, 0]]) / ln[:, None]  # outward for CCW
    n_prev = np.roll(en, 1, axis=0)
    dot = np.clip(np.sum(en * n_prev, axis=1), -0.999, 1.0)
    miter = (en + n_prev) / (1.0 + dot)[:, None]
    return pts + d * miter


def trace_contours(mask_or_field: np.ndarray, level: float = 0.5):
    """Sub-pixel closed contours of a scalar field via marching squares.

    The field is zero-padded so regions touching the border still close.
    Returns loops as (n, 2) arrays in (x, z) pixel-center coordinates.
    """
    from skimage import measure

    field = np.pad(np.asarray(mask_or_field, dtype=float), 1, mode="constant")
    loops = []
    for contour in measure.find_contours(field, level):
        # skimage returns (row, col) with the pad offset; convert to (x, z)
        closed = np.allclose(contour[0], contour[-1])
        pts = contour[:-1] if closed else contour
        if len(pts) < 3:
            continue
        xz = np.column_stack([pts[:, 1] - 1.0, pts[:, 0] - 1.0])
        loops.append(xz)
    return loops


def _loop_to_polygon(loop_px: np.ndarray, pixel_pitch: float) -> Polygon:
    # Pixel (row=z, col=x) centers sit at (col + 0.5, row + 0.5) in pixel
    # units; scale to um.
    um = (loop_px + 0.5) * pixel_pitch
    if signed_area(um) < 0:
        um = um[::-1]
    return Polygon(um)


def _hough_loop_ok(loop_px, mask) -> bool:
    """Sanity checks on a Hough-linked loop against the thresholded mask."""
    try:
        area = abs(signed_area(loop_px))
    except Exception:
        return False
    mask_area = float(mask.sum())
    if mask_area == 0 or area < 4.0:
        return False
    if not (0.75 * mask_area <= area <= 1.33 * mask_area):
        return False
    try:
        pts = loop_px if signed_area(loop_px) > 0 else loop_px[::-1]
        Polygon((pts + 0.5))
    except Exception:
        return False
    return True


def image_to_polygons(
    image,
    spacing: float = 0.1,
    pixel_pitch: float | None = None,
    min_feature: float = 0.05,
    canny_low: float = CANNY_LOW,
    canny_high: float = CANNY_HIGH,
    theta_bins: int = THETA_BINS,
    rho_bins: int = RHO_BINS,
    vote_threshold: int = VOTE_THRESHOLD,
) -> list[Polygon]:
    """Full conversion: topology image to discretized resonator polygons.

    Accepts a DesignImage or a bare 2D topology array indexed [row=z,
    col=x]. Connected components of the filtered image are processed
    independently so multiple resonators per cell come out as separate
    polygons. Raises ExtractionError (carrying the edge map) when nothing
    recoverable remains after filtering.
    """
    from .geometry import DesignImage

    if isinstance(image, DesignImage):
        topo = image.channel(0)
    else:
        topo = np.asarray(image, dtype=float)
    if pixel_pitch is None:
        pixel_pitch = PIXEL_PITCH_DEFAULT

    k = median_window_for_feature(min_feature, pixel_pitch)
    filtered = median_filter(topo, k)
    mask = filtered >= 0.5
    edge_map = canny_edges(filtered, canny_low, canny_high)
    if not mask.any():
        raise ExtractionError("blank topology channel after filtering", edge_map=edge_map)

    labels, n_comp = ndimage.label(mask)
    polygons: list[Polygon] = []
    for comp in range(1, n_comp + 1):
        comp_mask = labels == comp
        if comp_mask.sum() < 4:
            continue  # specks below any sensible feature size
        comp_field = np.where(comp_mask, filtered, 0.0)
        comp_edges = canny_edges(comp_field, canny_low, canny_high)
        loop = None
        segs = hough_lines(comp_edges, theta_bins, rho_bins, vote_threshold)
        # Segments arrive strongest first; weak accidental alignments can
        # derail the greedy chain, so try growing prefixes of the ranking.
        for k in (4, 5, 6, 8, 10, 12, 16, len(segs)):
            linked = link_segments(segs[: max(3, k)])
            if linked is None:
                continue
            linked = _offset_loop(linked, 0.5)
            if _hough_loop_ok(linked, comp_mask):
                loop = linked
                break
            if k >= len(segs):
                break
        if loop is None:
            # Paper-faithful path failed to close; trace the filtered field.
            loops = trace_contours(comp_field, 0.5)
            if loops:
                loop = max(loops, key=lambda l: abs(signed_area(l)))
        if loop is None:
            continue
        try:
            poly = _loop_to_polygon(loop, pixel_pitch)
            polygons.append(resample_polygon(poly, spacing))
        except Exception:
            continue
    if not polygons:
        raise ExtractionError(
            f"no closed resonator loop recoverable from {n_comp} component(s)",
            edge_map=edge_map,
        )
    return polygons


def edge_map_to_pgm(edges: np.ndarray) -> bytes:
    """Binary edge map as a PGM (P5) byte string for debugging dumps."""
    em = (np.asarray(edges) > 0.5).astype(np.uint8) * 255
    header = f"P5\n{em.shape[1]} {em.shape[0]}\n255\n".encode()
    return header + em[::-1, :].tobytes()
