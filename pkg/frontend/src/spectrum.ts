// Target-spectrum composition. The arithmetic mirrors the service's
// composition operation term for term so the emitted 800-point vector is
// bit-identical to what the backend would compute for the same peaks.

export const BAND_LO = 4.0;
export const BAND_HI = 10.0;
export const POINTS = 800;
const STEP = (BAND_HI - BAND_LO) / (POINTS - 1);

export interface Peak {
  center_um: number;
  fwhm_um: number;
  amplitude: number;
}

export function canonicalWavelengths(): Float64Array {
  const wl = new Float64Array(POINTS);
  for (let i = 0; i < POINTS; i++) wl[i] = BAND_LO + i * STEP;
  return wl;
}

export function lorentzian(lam: number, center: number, fwhm: number, amplitude: number): number {
  const half = fwhm / 2.0;
  const h2 = half * half;
  const d = lam - center;
  return (amplitude * h2) / (d * d + h2);
}

export function peakValid(p: Peak): boolean {
  return (
    p.center_um >= BAND_LO && p.center_um <= BAND_HI &&
    p.fwhm_um > 0 &&
    p.amplitude > 0 && p.amplitude <= 1
  );
}

// Sum of all peaks plus the freehand overlay, clipped to [0, 1].
export function composeTarget(peaks: Peak[], freehand: Float64Array | null = null): Float64Array {
  const wl = canonicalWavelengths();
  const out = new Float64Array(POINTS);
  for (const p of peaks) {
    for (let i = 0; i < POINTS; i++) {
      out[i] = out[i] + lorentzian(wl[i], p.center_um, p.fwhm_um, p.amplitude);
    }
  }
  if (freehand) {
    for (let i = 0; i < POINTS; i++) out[i] = out[i] + freehand[i];
  }
  for (let i = 0; i < POINTS; i++) {
    out[i] = Math.min(1.0, Math.max(0.0, out[i]));
  }
  return out;
}

// Freehand strokes are smoothed with a 5-point moving average before they
// enter the target; raw strokes never leave the editor.
export function smooth5(values: Float64Array): Float64Array {
  const n = values.length;
  const out = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    let acc = 0;
    let cnt = 0;
    for (let k = -2; k <= 2; k++) {
      const j = i + k;
      if (j >= 0 && j < n) {
        acc += values[j];
        cnt += 1;
      }
    }
    out[i] = acc / cnt;
  }
  return out;
}

export function targetIsEmpty(peaks: Peak[], freehand: Float64Array | null): boolean {
  if (peaks.length > 0) return false;
  if (!freehand) return true;
  for (let i = 0; i < freehand.length; i++) if (freehand[i] > 0) return false;
  return true;
}
