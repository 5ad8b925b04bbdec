"""Figure-of-merit evaluation and exact shape gradients via the adjoint
method.

The FOM is absorption (1 - R) at one or more target wavelengths, averaged
with weights. Because the assembled operator is complex symmetric, the
adjoint system is the same matrix with the reflection-overlap source placed
on the monitor line, so one forward factorization serves both solves. At
normal incidence with only the specular order propagating, the adjoint
field in the structure region is the forward field times a closed-form
reciprocity factor; that fast path skips the second triangular solve
entirely and is tested against the explicit transposed solve.

Shape gradients chain the cell sensitivities through the area-fraction
rasterization: displacing a vertex along its outward normal sweeps boundary
area into the cells under its two adjacent edges with a linear hat-function
weight, which is exactly the derivative of the supersampled fraction field
in the fine-sample limit.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import StalenessError
from .geometry import Design
from .parallel import parallel_map
from .solver import (
    FieldMap,
    SimGrid,
    _stretch_profiles,
    drude_permittivity,
    lattice_kz,
    reflection_coefficients,
    solve_forward,
)
from .spectra import BAND_UM

GRAD_EDGE_SAMPLES_PER_CELL = 4
CLAMP_EPS = 1e-9


@dataclass(frozen=True)
class FomSpec:
    """Target wavelengths and weights for the absorption objective."""

    target_wavelengths: tuple
    weights: tuple = ()

    def __post_init__(self):
        targets = tuple(float(t) for t in np.atleast_1d(self.target_wavelengths))
        if not targets:
            raise ValueError("need at least one target wavelength")
        for t in targets:
            if not (BAND_UM[0] <= t <= BAND_UM[1]):
                raise ValueError(f"target {t} um outside the solver band {BAND_UM}")
        if self.weights:
            w = np.asarray(self.weights, dtype=float)
            if len(w) != len(targets) or np.any(w <= 0):
                raise ValueError("weights must be positive, one per target")
            w = w / w.sum()
        else:
            w = np.full(len(targets), 1.0 / len(targets))
        object.__setattr__(self, "target_wavelengths", targets)
        object.__setattr__(self, "weights", tuple(float(x) for x in w))


def fom(design: Design, spec: FomSpec, grid: SimGrid | None = None,
        workers: int = 1) -> float:
    """Weighted mean absorption over the target wavelengths."""
    from .solver import absorption_at

    if grid is None:
        grid = SimGrid.for_design(design)

    values = parallel_map(
        lambda t: absorption_at(design, t, grid), spec.target_wavelengths, workers
    )
    return float(np.dot(spec.weights, values))


# -- adjoint solves ----------------------------------------------------------


def _specular_only(fields: FieldMap) -> bool:
    k0 = 2.0 * np.pi / fields.wavelength_um
    if fields.grid.nx < 2:
        return True
    kz1 = lattice_kz(k0, fields.grid, 1)
    return kz1.imag > 1e-9


def _adjoint_rhs(fields: FieldMap):
    """Source for the transposed system: conj of the R-overlap derivative."""
    grid = fields.grid
    _, c, w = reflection_coefficients(fields)
    row = np.conj(np.fft.ifft(w * c)) / fields.amplitude
    rhs = np.zeros(grid.nx * grid.nz, dtype=complex)
    rhs[grid.nx * grid.monitor_row: grid.nx * (grid.monitor_row + 1)] = row
    return rhs


def reciprocity_factor(fields: FieldMap) -> complex:
    """Scale mapping the forward field onto the adjoint field in the
    total-field region (normal-incidence reflective configuration)."""
    grid = fields.grid
    k0 = 2.0 * np.pi / fields.wavelength_um
    kz0 = lattice_kz(k0, grid, 0).real
    c0 = np.fft.fft(fields.hfield[:, grid.monitor_row])[0] / grid.nx / fields.amplitude
    zmon = (grid.monitor_row + 0.5) * grid.dz
    return complex(
        np.conj(c0) * grid.dz**2 * np.exp(1j * kz0 * zmon)
        / (2j * grid.nx * np.sin(kz0 * grid.dz) * fields.amplitude**2)
    )


def solve_adjoint(
    design: Design | None,
    wavelength_um: float,
    forward: FieldMap,
    grid: SimGrid | None = None,
    method: str = "auto",
) -> FieldMap:
    """Adjoint field for the reflection-overlap FOM.

    method 'explicit' solves the transposed system (the operator is
    symmetric, so the forward factorization is reused); 'fast' scales the
    forward solution by the reciprocity factor, valid when only the
    specular order propagates; 'auto' picks 'fast' whenever it is valid.
    The fast-path field is only meaningful below the TF/SF source line,
    which covers every design cell.
    """
    grid = grid or forward.grid
    if abs(forward.wavelength_um - wavelength_um) > 1e-12:
        raise StalenessError(
            f"forward field solved at {forward.wavelength_um} um, requested {wavelength_um} um"
        )
    if design is not None and forward.design_key is not None:
        if design.content_key() != forward.design_key:
            raise StalenessError("forward field belongs to a different design")

    if method == "auto":
        method = "fast" if _specular_only(forward) else "explicit"
    if method == "fast":
        if not _specular_only(forward):
            raise ValueError("fast path needs a specular-only configuration")
        beta = reciprocity_factor(forward)
        phi = beta * forward.hfield
        residual = 0.0
    elif method == "explicit":
        if forward._lu is None:
            raise StalenessError("forward field does not carry its factorization")
        rhs = _adjoint_rhs(forward)
        phi_vec = forward._lu.solve(rhs)
        phi = phi_vec.reshape((grid.nx, grid.nz), order="F")
        nrm = np.linalg.norm(rhs)
        residual = 0.0
        if nrm > 0:
            from .solver import assemble_operator

            A = assemble_operator(forward._perm, grid, 2.0 * np.pi / wavelength_um)
            residual = float(np.linalg.norm(A @ phi_vec - rhs) / nrm)
    else:
        raise ValueError(f"unknown adjoint method {method!r}")

    return FieldMap(
        hfield=phi,
        wavelength_um=wavelength_um,
        grid=grid,
        residual=residual,
        amplitude=forward.amplitude,
        design_key=forward.design_key,
        _lu=forward._lu,
        _perm=forward._perm,
    )


# -- sensitivities -----------------------------------------------------------


def permittivity_sensitivity(forward: FieldMap, adjoint: FieldMap) -> np.ndarray:
    """Complex per-cell S with dR = 2 Re(S_c * d eps_c) for any real
    parametrization of eps. Accumulates the face-coefficient derivatives of
    the operator contracted between the adjoint and forward fields.

    Defined on the plain cell-permittivity parametrization (every face the
    series value of its two cells); solve a design with a plain map when
    this diagnostic is needed, since design solves parametrize the
    resonator band by coverage instead.
    """
    grid = forward.grid
    perm = forward._perm
    if perm is None:
        raise StalenessError("forward field does not carry its permittivity map")
    if perm.band_fraction is not None:
        raise ValueError(
            "cell-permittivity sensitivities need a plain map; "
            "rebuild the permittivity without band fractions"
        )
    eps = perm.eps
    h = forward.hfield
    phi = adjoint.hfield
    k0 = 2.0 * np.pi / forward.wavelength_um
    sc, sf = _stretch_profiles(grid, k0)
    dx2, dz2 = grid.dx**2, grid.dz**2
    S = np.zeros_like(h)

    ebar_x = 0.5 * (eps + np.roll(eps, -1, axis=0))
    term = (sc[None, :] / dx2) * (phi - np.roll(phi, -1, axis=0)) \
        * (h - np.roll(h, -1, axis=0)) / (2.0 * ebar_x**2)
    S -= term
    S -= np.roll(term, 1, axis=0)

    ebar_z = 0.5 * (eps[:, :-1] + eps[:, 1:])
    term = (1.0 / (sf[None, 1:grid.nz] * dz2)) * (phi[:, :-1] - phi[:, 1:]) \
        * (h[:, :-1] - h[:, 1:]) / (2.0 * ebar_z**2)
    S[:, :-1] -= term
    S[:, 1:] -= term
    # Dirichlet boundary faces are in PML/backing rows whose permittivity
    # never depends on the design, so their derivative terms are dropped.
    return S


def permittivity_gradient(forward: FieldMap, adjoint: FieldMap,
                          wavelength_um: float) -> np.ndarray:
    """Real per-cell gradient of the absorption FOM with respect to the
    real part of each cell's permittivity."""
    if abs(forward.wavelength_um - wavelength_um) > 1e-12:
        raise StalenessError("fields solved at a different wavelength")
    S = permittivity_sensitivity(forward, adjoint)
    return -2.0 * np.real(S)  # FOM = 1 - R


def coverage_kernel(forward: FieldMap, adjoint: FieldMap) -> np.ndarray:
    """dFOM/d(coverage) per resonator-band cell for the absorption FOM.

    Differentiates the aligned-column face coefficients of the band with
    respect to each cell's metal fraction and contracts with the forward
    and adjoint fields. Exact for the discrete model up to the min/max
    branch ties of the column mix.
    """
    from .solver import series_coefficient

    grid = forward.grid
    perm = forward._perm
    if perm is None or perm.band_fraction is None:
        raise StalenessError("forward field was not solved from a design band map")
    f = perm.band_fraction
    r0 = perm.band_row0
    nr_b = f.shape[1]
    em, ev, es = perm.band_metal_eps, 1.0 + 0.0j, perm.band_below_eps
    s_mm = series_coefficient(em, em)
    s_mv = series_coefficient(em, ev)
    s_vv = series_coefficient(ev, ev)

    def dcol(f_self, f_other):
        # d(bilinear column mix)/d(f_self)
        return f_other * s_mm + (1.0 - 2.0 * f_other) * s_mv - (1.0 - f_other) * s_vv

    h = forward.hfield
    phi = adjoint.hfield
    k0 = 2.0 * np.pi / forward.wavelength_um
    sc, sf = _stretch_profiles(grid, k0)
    dx2, dz2 = grid.dx**2, grid.dz**2
    band = np.s_[:, r0:r0 + nr_b]
    dR = np.zeros((grid.nx, nr_b))

    # x faces (periodic) between cells (i) and (i+1) per band row
    w = (phi[band] - np.roll(phi[band], -1, axis=0)) \
        * (h[band] - np.roll(h[band], -1, axis=0)) * (sc[None, r0:r0 + nr_b] / dx2)
    f_next = np.roll(f, -1, axis=0)
    dR += 2.0 * np.real(dcol(f, f_next) * w)
    dR += np.roll(2.0 * np.real(dcol(f_next, f) * w), 1, axis=0)

    # z faces between band rows j and j+1
    if nr_b > 1:
        w = (phi[:, r0:r0 + nr_b - 1] - phi[:, r0 + 1:r0 + nr_b]) \
            * (h[:, r0:r0 + nr_b - 1] - h[:, r0 + 1:r0 + nr_b]) \
            / (sf[None, r0 + 1:r0 + nr_b] * dz2)
        dR[:, :-1] += 2.0 * np.real(dcol(f[:, :-1], f[:, 1:]) * w)
        dR[:, 1:] += 2.0 * np.real(dcol(f[:, 1:], f[:, :-1]) * w)

    # bottom face onto the spacer
    if r0 >= 1:
        w = (phi[:, r0 - 1] - phi[:, r0]) * (h[:, r0 - 1] - h[:, r0]) / (sf[r0] * dz2)
        dcol = series_coefficient(em, es) - series_coefficient(ev, es)
        dR[:, 0] += 2.0 * np.real(dcol * w)

    # top face onto vacuum
    jtop = r0 + nr_b - 1
    if jtop < grid.nz - 1:
        w = (phi[:, jtop] - phi[:, jtop + 1]) * (h[:, jtop] - h[:, jtop + 1]) \
            / (sf[jtop + 1] * dz2)
        dR[:, -1] += 2.0 * np.real((s_mv - s_vv) * w)

    from .solver import blur_fractions

    # chain through the (self-adjoint) coverage blur back to raw coverage
    return blur_fractions(-dR)  # FOM = 1 - R


# -- shape gradient ----------------------------------------------------------


@dataclass
class ShapeGradient:
    """Per-vertex dFOM per unit outward-normal displacement (1/um)."""

    values: list        # one float array per polygon
    normals: list       # one (n, 2) array per polygon
    fom_value: float = 0.0
    design_key: str | None = None

    def max_abs(self) -> float:
        return max((float(np.abs(v).max()) if len(v) else 0.0) for v in self.values)

    def scaled(self, factor: float) -> "ShapeGradient":
        return ShapeGradient(
            values=[v * factor for v in self.values],
            normals=self.normals,
            fom_value=self.fom_value,
            design_key=self.design_key,
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "fom": self.fom_value,
                "polygons": [
                    {
                        "gradient": v.tolist(),
                        "normals": n.tolist(),
                    }
                    for v, n in zip(self.values, self.normals)
                ],
            }
        )


def vertex_normals(vertices: np.ndarray) -> np.ndarray:
    """Outward unit normal per vertex of a CCW polygon (edge-normal
    bisector)."""
    d = np.roll(vertices, -1, axis=0) - vertices
    lengths = np.hypot(d[:, 0], d[:, 1])
    edge_n = np.column_stack([d[:, 1], -d[:, 0]]) / lengths[:, None]
    n = edge_n + np.roll(edge_n, 1, axis=0)
    nl = np.hypot(n[:, 0], n[:, 1])
    nl[nl < 1e-12] = 1.0
    return n / nl[:, None]


def _clamped_mask(vertices: np.ndarray, period: float, t_r: float) -> np.ndarray:
    x, z = vertices[:, 0], vertices[:, 1]
    return (
        (x <= CLAMP_EPS) | (x >= period - CLAMP_EPS)
        | (z <= CLAMP_EPS) | (z >= t_r - CLAMP_EPS)
    )


def _sweep_gradient_for_polygon(vertices, normals, kernel, grid, t_r):
    """Integrate the per-cell kernel over the boundary swept by each
    vertex's hat-function displacement field."""
    nx = grid.nx
    nr = grid.resonator_rows
    dxc = grid.dx
    dzc = grid.dz
    cell_area = dxc * dzc
    ds_target = min(dxc, dzc) / GRAD_EDGE_SAMPLES_PER_CELL

    nv = len(vertices)
    grad = np.zeros(nv)
    d = np.roll(vertices, -1, axis=0) - vertices
    lengths = np.hypot(d[:, 0], d[:, 1])
    edge_n = np.column_stack([d[:, 1], -d[:, 0]]) / lengths[:, None]

    for e in range(nv):
        a = vertices[e]
        L = lengths[e]
        nsamp = max(2, int(np.ceil(L / ds_target)))
        t = (np.arange(nsamp) + 0.5) / nsamp
        pts = a[None, :] + d[e][None, :] * t[:, None]
        ci = np.clip((pts[:, 0] / dxc).astype(int), 0, nx - 1)
        cj = np.clip((pts[:, 1] / dzc).astype(int), 0, nr - 1)
        kvals = kernel[ci, cj]
        dsw = L / nsamp / cell_area
        k_start = e          # hat of vertex e falls 1 -> 0 along this edge
        k_end = (e + 1) % nv  # hat of vertex e+1 rises 0 -> 1
        dot_start = float(np.dot(normals[k_start], edge_n[e]))
        dot_end = float(np.dot(normals[k_end], edge_n[e]))
        grad[k_start] += dot_start * float(np.sum(kvals * (1.0 - t))) * dsw
        grad[k_end] += dot_end * float(np.sum(kvals * t)) * dsw
    return grad


def shape_gradient(
    design: Design,
    spec: FomSpec,
    grid: SimGrid | None = None,
    method: str = "auto",
    workers: int = 1,
) -> ShapeGradient:
    """dFOM per unit outward-normal vertex displacement for every resonator
    vertex, plus the outward normals. Also reports the current FOM so the
    optimizer gets it without an extra solve. Vertices clamped at the cell
    bounds are returned with zero gradient."""
    if grid is None:
        grid = SimGrid.for_design(design)
    t_r = design.layers.resonator_thickness
    ng, ns, nr = grid.ground_rows, grid.spacer_rows, grid.resonator_rows

    from .solver import reflection

    def per_target(args):
        lam, weight = args
        fwd = solve_forward(design, lam, grid)
        adj = solve_adjoint(design, lam, fwd, grid, method=method)
        a_val = 1.0 - reflection(fwd)
        return a_val, weight * coverage_kernel(fwd, adj)

    results = parallel_map(
        per_target, list(zip(spec.target_wavelengths, spec.weights)), workers
    )
    fom_value = float(np.dot(spec.weights, [r[0] for r in results]))
    kernel = np.zeros((grid.nx, nr))
    for _, k in results:
        kernel = kernel + k

    values, normals = [], []
    for poly in design.resonators:
        verts = poly.vertices
        nrm = vertex_normals(verts)
        g = _sweep_gradient_for_polygon(verts, nrm, kernel, grid, t_r)
        g[_clamped_mask(verts, design.period, t_r)] = 0.0
        values.append(g)
        normals.append(nrm)
    return ShapeGradient(
        values=values, normals=normals, fom_value=fom_value,
        design_key=design.content_key(),
    )
