/** Gateway API types, schema "fieldlink-gateway/1". */

export type Phase = "connected" | "probing" | "disconnected";
export type IconColor = "grey" | "green" | "red";
export type FlagValue = "ok" | "warn";

export interface GlobalFlags {
  health: FlagValue;
  environment: FlagValue;
  equipment: FlagValue;
}

export interface Counters {
  polls: number;
  timeouts: number;
  parity_dropped: number;
  duplicates: number;
  protocol_violations: number;
  reconnects: number;
}

export interface OperatorSummary {
  op_id: string;
  session: string | null;
  phase: Phase;
  icon: IconColor;
  flags: GlobalFlags;
  position: [number, number] | null;
  gps_available: boolean;
  battery: number | null;
  last_seq: number;
  offset_ms: number | null;
  counters: Counters;
}

export interface OperatorDetail extends OperatorSummary {
  codes: Record<string, string>;
  events: TimelineEntry[];
  permanent_losses: [number, number][];
  history_len: number;
}

export interface TimelineEntry {
  t: number;
  flags: GlobalFlags;
  icon: IconColor;
}

export interface HistoryEntry {
  seq: number;
  peb: number;
  recv: number;
  realtime: boolean;
  position: [number, number] | null;
  channels: Record<string, number>;
}

export interface SessionMetricsRow {
  label: string;
  expected: number;
  received_valid: number;
  realtime: number;
  pct_correct: number;
  pct_realtime: number;
  offset_ms: number | null;
}

export interface OperatorsResponse {
  schema: string;
  scenario: string;
  seed: number;
  session: string | null;
  operators: OperatorSummary[];
}

/** One event off the gateway's push stream. */
export interface GatewayEvent {
  kind: "update" | "warning" | "phase" | "gap" | string;
  t: number;
  op_id: string;
  session?: string;
  phase?: Phase;
  icon?: IconColor;
  flags?: GlobalFlags;
  position?: [number, number] | null;
  battery?: number | null;
  last_seq?: number;
  after?: number;
  oldest?: number;
}
