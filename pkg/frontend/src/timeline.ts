/** Warning timeline: chronological flag transitions with metric overlays. */

import type { ConsoleStore } from "./store.js";
import type { GlobalFlags, SessionMetricsRow, TimelineEntry } from "./types.js";

export interface TimelineRow {
  t: number;
  icon: string;
  changes: string[];
}

function flagChanges(prev: GlobalFlags | null, next: GlobalFlags): string[] {
  const names: (keyof GlobalFlags)[] = ["health", "environment", "equipment"];
  if (!prev) return names.filter((n) => next[n] === "warn").map((n) => `${n} -> warn`);
  return names.filter((n) => prev[n] !== next[n]).map((n) => `${n} -> ${next[n]}`);
}

export function buildTimeline(entries: TimelineEntry[]): TimelineRow[] {
  const rows: TimelineRow[] = [];
  let prev: GlobalFlags | null = null;
  for (const entry of entries) {
    const changes = flagChanges(prev, entry.flags);
    rows.push({ t: entry.t, icon: entry.icon, changes });
    prev = entry.flags;
  }
  return rows;
}

export interface TimelineView {
  rows: TimelineRow[];
  metrics: SessionMetricsRow[];
}

export function timelineView(store: ConsoleStore, opId: string): TimelineView {
  return {
    rows: buildTimeline(store.timeline(opId)),
    metrics: store.metricsFor(opId),
  };
}

export function formatClock(tMs: number): string {
  const s = Math.floor(tMs / 1000);
  const hh = String(Math.floor(s / 3600)).padStart(2, "0");
  const mm = String(Math.floor((s % 3600) / 60)).padStart(2, "0");
  const ss = String(s % 60).padStart(2, "0");
  return `${hh}:${mm}:${ss}`;
}
