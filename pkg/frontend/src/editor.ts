// Target editor model: a peak list plus an optional freehand overlay drawn
// on the spectrum canvas, composed into the 800-point target vector.

import {
  BAND_HI,
  BAND_LO,
  POINTS,
  Peak,
  composeTarget,
  peakValid,
  smooth5,
  targetIsEmpty,
} from "./spectrum.js";

export class TargetEditor {
  peaks: Peak[] = [];
  private rawStroke: Float64Array | null = null;

  addPeak(center: number, fwhm = 0.75, amplitude = 1.0): string | null {
    const peak: Peak = { center_um: center, fwhm_um: fwhm, amplitude };
    if (!peakValid(peak)) {
      return `peak must sit in [${BAND_LO}, ${BAND_HI}] um with fwhm > 0 and amplitude in (0, 1]`;
    }
    this.peaks.push(peak);
    return null;
  }

  removePeak(index: number): void {
    this.peaks.splice(index, 1);
  }

  clear(): void {
    this.peaks = [];
    this.rawStroke = null;
  }

  // Record one freehand sample at a band wavelength; the stroke lives on
  // the canonical grid and is smoothed on emission.
  strokeAt(lam: number, value: number): void {
    if (lam < BAND_LO || lam > BAND_HI) return;
    if (!this.rawStroke) this.rawStroke = new Float64Array(POINTS);
    const i = Math.round(((lam - BAND_LO) / (BAND_HI - BAND_LO)) * (POINTS - 1));
    const v = Math.min(1, Math.max(0, value));
    // paint a short hat so sparse mouse samples connect
    for (let k = -2; k <= 2; k++) {
      const j = i + k;
      if (j >= 0 && j < POINTS) {
        this.rawStroke[j] = Math.max(this.rawStroke[j], v * (1 - Math.abs(k) / 3));
      }
    }
  }

  freehand(): Float64Array | null {
    return this.rawStroke ? smooth5(this.rawStroke) : null;
  }

  compose(): Float64Array {
    return composeTarget(this.peaks, this.freehand());
  }

  submitDisabled(): boolean {
    return targetIsEmpty(this.peaks, this.freehand());
  }

  toRequestBody(): { peaks: Peak[]; freehand?: number[] } {
    const body: { peaks: Peak[]; freehand?: number[] } = { peaks: this.peaks.slice() };
    const fh = this.freehand();
    if (fh) body.freehand = Array.from(fh);
    return body;
  }
}
