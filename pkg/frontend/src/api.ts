// Thin client for the workbench HTTP API.

import type { RunEvent, RunSnapshot } from "./state.js";
import type { Peak } from "./spectrum.js";

async function asJson(resp: Response): Promise<any> {
  if (!resp.ok) {
    let message = `${resp.status}`;
    try {
      const body = await resp.json();
      message = body.message ?? body.detail ?? message;
    } catch {
      /* non-JSON error body */
    }
    throw new Error(message);
  }
  return resp.json();
}

export async function createRun(peaks: Peak[], freehand: number[] | null): Promise<RunSnapshot> {
  const body: Record<string, unknown> = { peaks };
  if (freehand) body["freehand"] = freehand;
  return asJson(await fetch("/api/runs", {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  }));
}

export async function getRun(id: string): Promise<RunSnapshot> {
  return asJson(await fetch(`/api/runs/${id}`));
}

export async function listRuns(): Promise<RunSnapshot[]> {
  return asJson(await fetch("/api/runs"));
}

export async function postAction(
  id: string,
  action: "generate" | "validate",
): Promise<RunSnapshot> {
  return asJson(await fetch(`/api/runs/${id}/${action}`, { method: "POST" }));
}

export async function postOptimize(
  id: string,
  targetWavelengths: number[],
  config: Record<string, unknown> = {},
): Promise<RunSnapshot> {
  return asJson(await fetch(`/api/runs/${id}/optimize`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ target_wavelengths: targetWavelengths, config }),
  }));
}

export async function getEvents(id: string, after: number): Promise<RunEvent[]> {
  return asJson(await fetch(`/api/runs/${id}/events?after=${after}`));
}

export async function getTarget(id: string): Promise<{ composed: number[] }> {
  return asJson(await fetch(`/api/runs/${id}/target.json`));
}

export async function getSpectrumCsv(id: string): Promise<Float64Array | null> {
  const resp = await fetch(`/api/runs/${id}/spectrum.csv`);
  if (!resp.ok) return null;
  const text = await resp.text();
  const values = text.trim().split("\n").slice(1).map((l) => Number(l.split(",")[1]));
  return Float64Array.from(values);
}

export function designPngUrl(id: string, which: "latest" | "generated" | "final" = "latest"): string {
  return `/api/runs/${id}/design.png?which=${which}&t=${Date.now()}`;
}
