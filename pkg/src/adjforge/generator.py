"""Global-search stage: target spectra, the design library, and retrieval.

The generator interface is pluggable: the reference implementation is
nearest-neighbor retrieval over a self-built library of simulated template
designs, and an external model endpoint can be dropped in behind the same
contract (spectrum in, decodable design image out).
"""
from __future__ import annotations

import base64
import json
import os
import time
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import GenerationError, NoGeneratorError, TargetValidationError
from .geometry import (
    Design,
    DesignImage,
    LayerStack,
    MaterialParams,
    image_channels_to_params,
)
from .imagepipe import image_to_polygons
from .parallel import parallel_map
from .solver import SimGrid, absorption_spectrum
from .spectra import BAND_UM, CANONICAL_POINTS, Spectrum, canonical_wavelengths
from .templates import TEMPLATE_TAGS, template_design

GENERATE_BUDGET_S = 0.5       # retrieval wall-clock budget, <= 1e4 entries
EXTERNAL_DEADLINE_S = 5.0


def lorentzian(lam, center_um: float, fwhm_um: float, amplitude: float = 1.0):
    """Lorentzian line shape A * (G/2)^2 / ((lam - lam0)^2 + (G/2)^2)."""
    if fwhm_um <= 0:
        raise ValueError("fwhm must be positive")
    half = fwhm_um / 2.0
    h2 = half * half
    lam = np.asarray(lam, dtype=float)
    return amplitude * h2 / ((lam - center_um) ** 2 + h2)


@dataclass(frozen=True)
class LorentzPeak:
    center_um: float
    fwhm_um: float = 0.75
    amplitude: float = 1.0

    def __post_init__(self):
        if not (BAND_UM[0] <= self.center_um <= BAND_UM[1]):
            raise TargetValidationError(
                f"peak center {self.center_um} um outside the band {BAND_UM}",
                field="peaks[].center_um",
            )
        if self.fwhm_um <= 0:
            raise TargetValidationError("fwhm must be positive", field="peaks[].fwhm_um")
        if not (0.0 < self.amplitude <= 1.0):
            raise TargetValidationError(
                "amplitude must lie in (0, 1]", field="peaks[].amplitude"
            )


@dataclass(frozen=True)
class TargetSpec:
    """Absorption target: Lorentzian peaks and/or a freehand 800-point
    vector; the composed spectrum is their sum clipped to [0, 1]."""

    peaks: tuple = ()
    freehand: tuple | None = None

    def __post_init__(self):
        peaks = tuple(
            p if isinstance(p, LorentzPeak) else LorentzPeak(*p) for p in self.peaks
        )
        object.__setattr__(self, "peaks", peaks)
        if self.freehand is not None:
            fh = np.asarray(self.freehand, dtype=float)
            if fh.shape != (CANONICAL_POINTS,):
                raise TargetValidationError(
                    f"freehand vector must have {CANONICAL_POINTS} points",
                    field="freehand",
                )
            object.__setattr__(self, "freehand", tuple(float(v) for v in fh))
        if not peaks and self.freehand is None:
            raise TargetValidationError("target needs peaks or a freehand vector")

    def compose(self) -> np.ndarray:
        """Target absorption on the canonical 800-point grid."""
        lam = canonical_wavelengths()
        total = np.zeros(CANONICAL_POINTS)
        for p in self.peaks:
            total = total + lorentzian(lam, p.center_um, p.fwhm_um, p.amplitude)
        if self.freehand is not None:
            total = total + np.asarray(self.freehand)
        return np.clip(total, 0.0, 1.0)

    def to_dict(self) -> dict:
        d = {"peaks": [
            {"center_um": p.center_um, "fwhm_um": p.fwhm_um, "amplitude": p.amplitude}
            for p in self.peaks
        ]}
        if self.freehand is not None:
            d["freehand"] = list(self.freehand)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TargetSpec":
        peaks = tuple(
            LorentzPeak(p["center_um"], p.get("fwhm_um", 0.75), p.get("amplitude", 1.0))
            for p in d.get("peaks", [])
        )
        return cls(peaks=peaks, freehand=tuple(d["freehand"]) if d.get("freehand") else None)


# -- library -----------------------------------------------------------------


@dataclass
class LibraryEntry:
    design: Design
    spectrum: Spectrum          # canonical 800-point
    template: str
    params: dict
    key: str

    def to_manifest_row(self) -> dict:
        return {
            "key": self.key,
            "template": self.template,
            "params": self.params,
            "design_file": f"design_{self.key}.json",
            "spectrum_file": f"spectrum_{self.key}.csv",
        }


class Library:
    """On-disk design library: manifest.json plus per-entry design and
    spectrum files. Reads are lock-free after load."""

    def __init__(self, entries: list[LibraryEntry], directory: str | None = None):
        self.entries = entries
        self.directory = directory
        self._matrix = None

    def __len__(self):
        return len(self.entries)

    def spectra_matrix(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = np.array([e.spectrum.values for e in self.entries])
        return self._matrix

    def nearest(self, target_vector: np.ndarray):
        """Exact nearest neighbor by L2 distance on the canonical grid;
        ties break toward the lowest entry index."""
        if not self.entries:
            raise NoGeneratorError("library is empty")
        d2 = np.sum((self.spectra_matrix() - target_vector[None, :]) ** 2, axis=1)
        idx = int(np.argmin(d2))
        return self.entries[idx], float(np.sqrt(d2[idx])), idx

    @classmethod
    def load(cls, directory: str) -> "Library":
        with open(os.path.join(directory, "manifest.json")) as f:
            manifest = json.load(f)
        entries = []
        for row in manifest["entries"]:
            with open(os.path.join(directory, row["design_file"])) as f:
                design = Design.from_json(f.read())
            with open(os.path.join(directory, row["spectrum_file"])) as f:
                spectrum = Spectrum.from_csv(f.read())
            entries.append(
                LibraryEntry(design, spectrum.to_canonical(), row["template"],
                             row["params"], row["key"])
            )
        return cls(entries, directory)


def default_sweep() -> dict:
    """Desk-scale default: fixed stack, topology varied per template."""
    return {
        "ribbon": {"width": np.round(np.arange(1.0, 2.45, 0.1), 3), "height": [0.2]},
        "cross": {"width": np.round(np.arange(1.6, 2.9, 0.2), 3), "height": [0.35]},
        "square": {"width": np.round(np.arange(0.15, 0.40, 0.05), 3)},
        "ellipse": {"width": np.round(np.arange(1.2, 2.6, 0.2), 3), "height": [0.3]},
        "bow-tie": {"width": np.round(np.arange(1.2, 2.6, 0.2), 3), "height": [0.3]},
    }


def _entry_files_present(directory, row):
    return (
        os.path.exists(os.path.join(directory, row["design_file"]))
        and os.path.exists(os.path.join(directory, row["spectrum_file"]))
    )


def build_library(
    out_dir: str,
    templates=None,
    sweep: dict | None = None,
    wavelengths=None,
    workers: int = 1,
    period: float = 3.2,
    layers: LayerStack | None = None,
    material_params: MaterialParams | None = None,
    max_failure_fraction: float = 0.1,
) -> Library:
    """Simulate every template/parameter combination and persist the
    library. Already-present entries (by design content key) are skipped,
    so an interrupted build resumes where it stopped."""
    templates = list(templates) if templates is not None else list(TEMPLATE_TAGS)
    sweep = sweep if sweep is not None else default_sweep()
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, "manifest.json")
    existing_rows = {}
    if os.path.exists(manifest_path):
        with open(manifest_path) as f:
            for row in json.load(f)["entries"]:
                if _entry_files_present(out_dir, row):
                    existing_rows[row["key"]] = row

    jobs = []
    for tag in templates:
        axes = sweep.get(tag)
        if not axes:
            continue
        names = sorted(axes.keys())
        for combo in product(*(axes[n] for n in names)):
            params = {n: float(v) for n, v in zip(names, combo)}
            try:
                design = template_design(
                    tag, period=period, layers=layers,
                    material_params=material_params, **params,
                )
            except Exception:
                continue  # parameter combination outside the template's domain
            jobs.append((tag, params, design))
    if not jobs:
        raise ValueError("sweep produced no designs")

    def simulate(job):
        tag, params, design = job
        key = design.content_key()
        if key in existing_rows:
            return ("skipped", key, None)
        try:
            grid = SimGrid.for_design(design)
            spectrum = absorption_spectrum(design, wavelengths, grid, canonical=True)
            return ("ok", key, LibraryEntry(design, spectrum, tag, params, key))
        except Exception as exc:
            return ("failed", key, f"{tag} {params}: {exc}")

    results = parallel_map(simulate, jobs, workers)
    failures = [r[2] for r in results if r[0] == "failed"]
    if len(failures) > max_failure_fraction * len(jobs):
        raise RuntimeError(
            f"{len(failures)}/{len(jobs)} library solves failed: {failures[:3]}"
        )

    rows = list(existing_rows.values())
    entries = []
    for status, key, payload in results:
        if status == "ok":
            entry = payload
            with open(os.path.join(out_dir, f"design_{key}.json"), "w") as f:
                f.write(entry.design.to_json())
            with open(os.path.join(out_dir, f"spectrum_{key}.csv"), "w") as f:
                f.write(entry.spectrum.to_csv())
            rows.append(entry.to_manifest_row())
            entries.append(entry)
    rows.sort(key=lambda r: (r["template"], json.dumps(r["params"], sort_keys=True)))
    with open(manifest_path, "w") as f:
        json.dump({"entries": rows}, f, indent=2, sort_keys=True)
    return Library.load(out_dir)


# -- generation ---------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorHandle:
    """Opaque reference to a generator backend.

    kind 'retrieval' serves nearest-neighbor lookups from a library; kind
    'external' posts the target vector to a model endpoint and decodes the
    returned design image.
    """

    kind: str = "retrieval"
    library: Library | None = field(default=None, compare=False)
    url: str | None = None
    deadline_s: float = EXTERNAL_DEADLINE_S

    def __post_init__(self):
        if self.kind not in ("retrieval", "external"):
            raise ValueError("kind must be 'retrieval' or 'external'")


def _generate_retrieval(target: TargetSpec, handle: GeneratorHandle):
    if handle.library is None or len(handle.library) == 0:
        raise NoGeneratorError("retrieval generator has no library entries")
    t0 = time.perf_counter()
    vec = target.compose()
    entry, distance, idx = handle.library.nearest(vec)
    elapsed = time.perf_counter() - t0
    provenance = {
        "method": "retrieval",
        "distance": distance,
        "entry_index": idx,
        "entry_key": entry.key,
        "template": entry.template,
        "params": entry.params,
        "elapsed_ms": elapsed * 1000.0,
    }
    return entry.design, provenance


def _generate_external(target: TargetSpec, handle: GeneratorHandle):
    import requests

    payload = {"spectrum": [float(v) for v in target.compose()]}
    try:
        resp = requests.post(handle.url, json=payload, timeout=handle.deadline_s)
        resp.raise_for_status()
        body = resp.json()
    except Exception as exc:
        raise GenerationError(f"external generator failed: {exc}") from exc
    try:
        image = DesignImage.from_png_bytes(base64.b64decode(body["image_png_b64"]))
        params, layers = image_channels_to_params(image)
        polygons = image_to_polygons(image)
        design = Design(period=3.2, layers=layers, resonators=polygons,
                        material_params=params)
    except Exception as exc:
        raise GenerationError(
            f"external generator returned an undecodable design: {exc}", payload=body
        ) from exc
    return design, {"method": "external", "url": handle.url, "params": body.get("params")}


def generate(target: TargetSpec, handle: GeneratorHandle):
    """Produce a design for the target; returns (Design, provenance dict)."""
    if handle.kind == "retrieval":
        return _generate_retrieval(target, handle)
    return _generate_external(target, handle)


def compose_multi_target(peaks, handle: GeneratorHandle):
    """Generate one cell per target peak and merge them into a supercell.

    Returns (Design, provenance list with one record per peak).
    """
    from .geometry import compose_supercell

    peaks = list(peaks)
    if not (1 <= len(peaks) <= 4):
        raise TargetValidationError("supercell composition takes 1 to 4 peaks")
    cells, provenance = [], []
    for p in peaks:
        peak = p if isinstance(p, LorentzPeak) else LorentzPeak(*p)
        design, prov = generate(TargetSpec(peaks=(peak,)), handle)
        cells.append(design)
        provenance.append({"peak_um": peak.center_um, **prov})
    return compose_supercell(cells), provenance
