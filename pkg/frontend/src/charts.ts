// Hand-rolled canvas charts: a spectrum overlay and the FOM iteration feed.
// Series colors follow the blue / orange / yellow convention of the
// workflow figures (target / generated-validated / optimized).

import { BAND_LO, BAND_HI, canonicalWavelengths } from "./spectrum.js";
import type { IterationPoint } from "./state.js";

export const SERIES_COLORS = {
  target: "#2c6fbb",
  validated: "#e8842c",
  optimized: "#e8c62c",
};

interface Margins { l: number; r: number; t: number; b: number }
const M: Margins = { l: 46, r: 12, t: 10, b: 30 };

function prepare(canvas: HTMLCanvasElement): CanvasRenderingContext2D {
  const ctx = canvas.getContext("2d")!;
  const ratio = window.devicePixelRatio || 1;
  const w = canvas.clientWidth || canvas.width;
  const h = canvas.clientHeight || canvas.height;
  canvas.width = w * ratio;
  canvas.height = h * ratio;
  ctx.setTransform(ratio, 0, 0, ratio, 0, 0);
  ctx.clearRect(0, 0, w, h);
  return ctx;
}

function frame(ctx: CanvasRenderingContext2D, w: number, h: number,
               xlab: string, ylab: string) {
  ctx.strokeStyle = "#99a";
  ctx.lineWidth = 1;
  ctx.strokeRect(M.l, M.t, w - M.l - M.r, h - M.t - M.b);
  ctx.fillStyle = "#667";
  ctx.font = "11px sans-serif";
  ctx.textAlign = "center";
  ctx.fillText(xlab, M.l + (w - M.l - M.r) / 2, h - 8);
  ctx.save();
  ctx.translate(12, M.t + (h - M.t - M.b) / 2);
  ctx.rotate(-Math.PI / 2);
  ctx.fillText(ylab, 0, 0);
  ctx.restore();
}

export interface SpectrumSeries {
  values: Float64Array;
  color: string;
  label: string;
}

export function drawSpectra(canvas: HTMLCanvasElement, series: SpectrumSeries[],
                            markers: number[] = []): void {
  const ctx = prepare(canvas);
  const w = canvas.clientWidth || canvas.width;
  const h = canvas.clientHeight || canvas.height;
  const px = (lam: number) =>
    M.l + ((lam - BAND_LO) / (BAND_HI - BAND_LO)) * (w - M.l - M.r);
  const py = (v: number) => h - M.b - v * (h - M.t - M.b);
  frame(ctx, w, h, "wavelength (um)", "absorption");

  for (const tick of [4, 5, 6, 7, 8, 9, 10]) {
    ctx.fillStyle = "#667";
    ctx.textAlign = "center";
    ctx.fillText(String(tick), px(tick), h - M.b + 14);
  }
  for (const tick of [0, 0.5, 1]) {
    ctx.textAlign = "right";
    ctx.fillText(tick.toFixed(1), M.l - 5, py(tick) + 4);
  }
  // optimization target markers (dashed red verticals)
  ctx.save();
  ctx.strokeStyle = "#c33";
  ctx.setLineDash([4, 4]);
  for (const lam of markers) {
    ctx.beginPath();
    ctx.moveTo(px(lam), py(0));
    ctx.lineTo(px(lam), py(1));
    ctx.stroke();
  }
  ctx.restore();

  const wl = canonicalWavelengths();
  let legendY = M.t + 14;
  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.lineWidth = 1.6;
    ctx.beginPath();
    for (let i = 0; i < wl.length; i++) {
      const x = px(wl[i]);
      const y = py(s.values[i]);
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    }
    ctx.stroke();
    ctx.fillStyle = s.color;
    ctx.textAlign = "left";
    ctx.fillText(s.label, M.l + 8, legendY);
    legendY += 14;
  }
}

export function drawFomChart(canvas: HTMLCanvasElement, points: IterationPoint[]): void {
  const ctx = prepare(canvas);
  const w = canvas.clientWidth || canvas.width;
  const h = canvas.clientHeight || canvas.height;
  frame(ctx, w, h, "iteration", "FOM");
  if (!points.length) return;
  const maxIter = Math.max(5, ...points.map((p) => p.index));
  const px = (i: number) => M.l + (i / maxIter) * (w - M.l - M.r);
  const py = (v: number) => h - M.b - v * (h - M.t - M.b);
  for (const tick of [0, 0.5, 1]) {
    ctx.fillStyle = "#667";
    ctx.textAlign = "right";
    ctx.fillText(tick.toFixed(1), M.l - 5, py(tick) + 4);
  }
  ctx.strokeStyle = SERIES_COLORS.optimized;
  ctx.lineWidth = 1.6;
  ctx.beginPath();
  points.forEach((p, i) => {
    const x = px(p.index);
    const y = py(p.fom);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();
  for (const p of points) {
    ctx.fillStyle = p.accepted ? "#2a7" : "#c33";
    ctx.beginPath();
    ctx.arc(px(p.index), py(p.fom), 3, 0, 2 * Math.PI);
    ctx.fill();
  }
}
