// Client-side session state: run snapshots, the append-only event feed and
// the action gating that mirrors the server's state machine (the server
// stays authoritative; the gate only prevents requests that must fail).

export type RunState =
  | "created" | "generated" | "validated" | "optimizing" | "done" | "failed";

export interface RunSnapshot {
  id: string;
  state: RunState;
  error?: string | null;
  termination?: string | null;
  initial_fom?: number | null;
  final_fom?: number | null;
  delta_fom?: number | null;
}

export interface RunEvent {
  seq: number;
  kind: "state-change" | "iteration";
  payload: Record<string, unknown>;
}

export type Action = "generate" | "validate" | "optimize";

const ENABLED: Record<RunState, Action[]> = {
  created: ["generate"],
  generated: ["validate"],
  validated: ["optimize"],
  optimizing: [],
  done: [],
  failed: [],
};

export function enabledActions(state: RunState): Action[] {
  return ENABLED[state] ?? [];
}

export function actionEnabled(state: RunState, action: Action): boolean {
  return enabledActions(state).includes(action);
}

export interface IterationPoint {
  index: number;
  fom: number;
  accepted: boolean;
}

export interface Feed {
  cursor: number;               // highest applied sequence number
  state: RunState;
  iterations: IterationPoint[]; // append-only, ordered by arrival sequence
}

export function emptyFeed(initial: RunState = "created"): Feed {
  return { cursor: 0, state: initial, iterations: [] };
}

// Apply a batch of polled events. Events at or below the cursor are stale
// duplicates and are dropped; the rest must arrive in sequence order, so
// the iteration series is append-only and never reorders.
export function applyEvents(feed: Feed, events: RunEvent[]): Feed {
  let { cursor, state } = feed;
  const iterations = feed.iterations.slice();
  const sorted = events.slice().sort((a, b) => a.seq - b.seq);
  for (const evt of sorted) {
    if (evt.seq <= cursor) continue;
    cursor = evt.seq;
    if (evt.kind === "state-change") {
      state = evt.payload["state"] as RunState;
    } else if (evt.kind === "iteration") {
      iterations.push({
        index: evt.payload["index"] as number,
        fom: evt.payload["fom"] as number,
        accepted: Boolean(evt.payload["accepted"]),
      });
    }
  }
  return { cursor, state, iterations };
}

// Series present on a run: never render a curve whose artifact the run has
// not produced yet.
export interface SeriesFlags {
  target: boolean;
  validated: boolean;
  optimized: boolean;
}

export function seriesForState(state: RunState): SeriesFlags {
  const reached = (s: RunState, after: RunState[]) => after.includes(s);
  return {
    target: true,
    validated: reached(state, ["validated", "optimizing", "done"]),
    optimized: state === "done",
  };
}
