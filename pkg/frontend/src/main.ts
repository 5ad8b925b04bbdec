// Workbench wiring: target editor panel, run console with state-gated
// actions, spectra overlay, live FOM feed (1 s polling) and the design
// image tabs.

import * as api from "./api.js";
import { SERIES_COLORS, drawFomChart, drawSpectra } from "./charts.js";
import { TargetEditor } from "./editor.js";
import {
  Action,
  Feed,
  RunSnapshot,
  actionEnabled,
  applyEvents,
  emptyFeed,
  seriesForState,
} from "./state.js";

const $ = <T extends HTMLElement>(id: string): T =>
  document.getElementById(id) as T;

const editor = new TargetEditor();
let run: RunSnapshot | null = null;
let feed: Feed = emptyFeed();
let validatedSpectrum: Float64Array | null = null;
let optimizedSpectrum: Float64Array | null = null;
let targetVector: Float64Array | null = null;
let pollTimer: number | null = null;
let actionInFlight = false;

function setStatus(text: string, isError = false): void {
  const el = $("status");
  el.textContent = text;
  el.className = isError ? "status error" : "status";
}

function renderEditor(): void {
  const list = $("peak-list");
  list.innerHTML = "";
  editor.peaks.forEach((p, i) => {
    const li = document.createElement("li");
    li.textContent = `${p.center_um.toFixed(2)} um, fwhm ${p.fwhm_um.toFixed(2)}, A ${p.amplitude.toFixed(2)} `;
    const rm = document.createElement("button");
    rm.textContent = "remove";
    rm.onclick = () => {
      editor.removePeak(i);
      renderEditor();
    };
    li.appendChild(rm);
    list.appendChild(li);
  });
  ($("btn-create") as HTMLButtonElement).disabled = editor.submitDisabled();
  drawSpectra($("editor-chart") as HTMLCanvasElement, [
    { values: editor.compose(), color: SERIES_COLORS.target, label: "target preview" },
  ]);
}

function renderConsole(): void {
  const stateEl = $("run-state");
  if (!run) {
    stateEl.textContent = "no run";
    for (const a of ["generate", "validate", "optimize"] as Action[]) {
      ($(`btn-${a}`) as HTMLButtonElement).disabled = true;
    }
    return;
  }
  stateEl.textContent = `${run.id} - ${feed.state}` +
    (run.error ? ` (${run.error})` : "");
  for (const a of ["generate", "validate", "optimize"] as Action[]) {
    ($(`btn-${a}`) as HTMLButtonElement).disabled =
      actionInFlight || !actionEnabled(feed.state, a);
  }

  const flags = seriesForState(feed.state);
  const series = [];
  if (flags.target && targetVector) {
    series.push({ values: targetVector, color: SERIES_COLORS.target, label: "target" });
  }
  if (flags.validated && validatedSpectrum) {
    series.push({ values: validatedSpectrum, color: SERIES_COLORS.validated, label: "generated (validated)" });
  }
  if (flags.optimized && optimizedSpectrum) {
    series.push({ values: optimizedSpectrum, color: SERIES_COLORS.optimized, label: "optimized" });
  }
  const markers = parseTargets(($("optimize-targets") as HTMLInputElement).value);
  drawSpectra($("run-chart") as HTMLCanvasElement, series, markers);
  drawFomChart($("fom-chart") as HTMLCanvasElement, feed.iterations);

  const badge = $("delta-badge");
  if (feed.state === "done" && run.delta_fom != null) {
    badge.textContent = `dFOM ${run.delta_fom >= 0 ? "+" : ""}${run.delta_fom.toFixed(4)} (${run.termination})`;
    badge.style.display = "inline-block";
  } else {
    badge.style.display = "none";
  }
  const img = $("design-img") as HTMLImageElement;
  if (["generated", "validated", "optimizing", "done"].includes(feed.state)) {
    img.src = api.designPngUrl(run.id);
    img.style.display = "block";
  }
}

function parseTargets(text: string): number[] {
  return text
    .split(",")
    .map((t) => Number(t.trim()))
    .filter((v) => Number.isFinite(v) && v >= 4 && v <= 10);
}

async function refreshRun(): Promise<void> {
  if (!run) return;
  try {
    const [snapshot, events] = await Promise.all([
      api.getRun(run.id),
      api.getEvents(run.id, feed.cursor),
    ]);
    run = snapshot;
    feed = applyEvents(feed, events);
    if (feed.state === "validated" && !validatedSpectrum) {
      validatedSpectrum = await api.getSpectrumCsv(run.id);
    }
    renderConsole();
  } catch (err) {
    setStatus(`poll failed: ${err}`, true);
  }
}

function startPolling(): void {
  if (pollTimer !== null) window.clearInterval(pollTimer);
  pollTimer = window.setInterval(refreshRun, 1000);
}

async function doAction(fn: () => Promise<RunSnapshot>): Promise<void> {
  if (actionInFlight) return;
  actionInFlight = true;
  renderConsole();
  try {
    run = await fn();
    feed = { ...feed, state: run.state };
    setStatus(`state: ${run.state}`);
  } catch (err) {
    setStatus(`${err}`, true);
  } finally {
    actionInFlight = false;
    await refreshRun();
  }
}

function wire(): void {
  $("btn-add-peak").onclick = () => {
    const center = Number(($("peak-center") as HTMLInputElement).value);
    const fwhm = Number(($("peak-fwhm") as HTMLInputElement).value);
    const amp = Number(($("peak-amp") as HTMLInputElement).value);
    const err = editor.addPeak(center, fwhm, amp);
    setStatus(err ?? "peak added", err !== null);
    renderEditor();
  };
  $("btn-clear").onclick = () => {
    editor.clear();
    renderEditor();
  };
  $("btn-create").onclick = () =>
    doAction(async () => {
      const body = editor.toRequestBody();
      const created = await api.createRun(body.peaks, body.freehand ?? null);
      feed = emptyFeed(created.state as Feed["state"]);
      validatedSpectrum = null;
      optimizedSpectrum = null;
      const t = await api.getTarget(created.id);
      targetVector = Float64Array.from(t.composed);
      startPolling();
      return created;
    });
  $("btn-generate").onclick = () =>
    doAction(() => api.postAction(run!.id, "generate"));
  $("btn-validate").onclick = () =>
    doAction(async () => {
      const out = await api.postAction(run!.id, "validate");
      validatedSpectrum = await api.getSpectrumCsv(run!.id);
      return out;
    });
  $("btn-optimize").onclick = () =>
    doAction(() => {
      const targets = parseTargets(($("optimize-targets") as HTMLInputElement).value);
      return api.postOptimize(run!.id, targets);
    });

  // freehand drawing on the editor chart
  const canvas = $("editor-chart") as HTMLCanvasElement;
  let drawing = false;
  const sample = (ev: MouseEvent) => {
    const rect = canvas.getBoundingClientRect();
    const fx = (ev.clientX - rect.left - 46) / (rect.width - 46 - 12);
    const fy = 1 - (ev.clientY - rect.top - 10) / (rect.height - 10 - 30);
    editor.strokeAt(4 + fx * 6, fy);
  };
  canvas.onmousedown = (ev) => {
    drawing = true;
    sample(ev);
  };
  canvas.onmousemove = (ev) => {
    if (drawing) {
      sample(ev);
      renderEditor();
    }
  };
  window.addEventListener("mouseup", () => {
    if (drawing) {
      drawing = false;
      renderEditor();
    }
  });

  renderEditor();
  renderConsole();
}

wire();
