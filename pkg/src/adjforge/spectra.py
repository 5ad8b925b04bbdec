"""Wavelength-sampled absorption spectra and the canonical target grid."""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

BAND_UM = (4.0, 10.0)
CANONICAL_POINTS = 800
# Fixed-form grid definition (4 + i * step) shared verbatim with the UI so
# composed target vectors agree bit for bit across languages.
CANONICAL_STEP = (BAND_UM[1] - BAND_UM[0]) / (CANONICAL_POINTS - 1)

ENERGY_EPS = 1e-3  # tolerated numerical excursion outside [0, 1]


def canonical_wavelengths() -> np.ndarray:
    return BAND_UM[0] + np.arange(CANONICAL_POINTS) * CANONICAL_STEP


def default_solve_wavelengths(n: int = 121) -> np.ndarray:
    """Wavelengths actually solved; spectra interpolate onto the canonical
    grid afterwards."""
    return np.linspace(BAND_UM[0], BAND_UM[1], n)


@dataclass(frozen=True)
class Spectrum:
    """Absorption versus wavelength. Values are reported in [0, 1]."""

    wavelengths: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        wl = np.asarray(self.wavelengths, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if wl.shape != v.shape or wl.ndim != 1:
            raise ValueError("wavelengths and values must be matching 1D arrays")
        if np.any(np.diff(wl) <= 0):
            raise ValueError("wavelengths must be strictly increasing")
        if v.min() < -ENERGY_EPS or v.max() > 1.0 + ENERGY_EPS:
            raise ValueError(
                f"absorption outside [-{ENERGY_EPS}, 1+{ENERGY_EPS}]: "
                f"[{v.min():.4g}, {v.max():.4g}]"
            )
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "values", np.clip(v, 0.0, 1.0))

    def __len__(self):
        return len(self.wavelengths)

    def to_canonical(self) -> "Spectrum":
        """Monotone-cubic interpolation onto the canonical 800-point grid."""
        from scipy.interpolate import PchipInterpolator

        grid = canonical_wavelengths()
        if len(self) == CANONICAL_POINTS and np.array_equal(self.wavelengths, grid):
            return self
        interp = PchipInterpolator(self.wavelengths, self.values, extrapolate=True)
        return Spectrum(grid, np.clip(interp(grid), 0.0, 1.0))

    def value_at(self, wl: float) -> float:
        return float(np.interp(wl, self.wavelengths, self.values))

    def peak(self):
        """(wavelength, value) of the absorption maximum, refined by a
        parabolic fit through the three samples around the argmax."""
        i = int(np.argmax(self.values))
        wl, v = self.wavelengths, self.values
        if 0 < i < len(v) - 1:
            denom = v[i - 1] - 2 * v[i] + v[i + 1]
            if abs(denom) > 1e-15:
                shift = 0.5 * (v[i - 1] - v[i + 1]) / denom
                shift = float(np.clip(shift, -1.0, 1.0))
                step = 0.5 * (wl[min(i + 1, len(wl) - 1)] - wl[max(i - 1, 0)])
                return float(wl[i] + shift * step), float(v[i])
        return float(wl[i]), float(v[i])

    # -- CSV ----------------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("wavelength_um,absorption\n")
        for wl, v in zip(self.wavelengths, self.values):
            buf.write(f"{wl:.9g},{v:.9g}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Spectrum":
        lines = [ln for ln in text.strip().splitlines() if ln]
        if not lines or lines[0].strip() != "wavelength_um,absorption":
            raise ValueError("expected header 'wavelength_um,absorption'")
        rows = [ln.split(",") for ln in lines[1:]]
        wl = np.array([float(r[0]) for r in rows])
        v = np.array([float(r[1]) for r in rows])
        return cls(wl, v)
