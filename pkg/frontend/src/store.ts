/** Central view state: one source of truth fed by the gateway.
 *
 * Every displayed value is traceable to a gateway response; the store never
 * re-derives warning logic. Events mutate operator views in place, grow the
 * position trail, and append flag transitions to the per-operator timeline.
 */

import { GatewayClient } from "./gateway.js";
import { EventStream, type SseEvent } from "./sse.js";
import type {
  GatewayEvent,
  GlobalFlags,
  IconColor,
  OperatorSummary,
  Phase,
  SessionMetricsRow,
  TimelineEntry,
} from "./types.js";

export interface OperatorView extends OperatorSummary {
  trail: [number, number][];
  lastEventT: number;
}

export interface StoreSnapshot {
  operators: OperatorView[];
  session: string | null;
  scenario: string | null;
  gatewayOk: boolean;
  streaming: boolean;
  metrics: SessionMetricsRow[];
}

const TRAIL_LIMIT = 600;

export class ConsoleStore {
  readonly operators = new Map<string, OperatorView>();
  readonly timelines = new Map<string, TimelineEntry[]>();
  session: string | null = null;
  scenario: string | null = null;
  gatewayOk = false;
  metrics: SessionMetricsRow[] = [];
  private stream: EventStream | null = null;
  private listeners: ((ev: GatewayEvent | null) => void)[] = [];

  constructor(readonly gateway: GatewayClient) {}

  onChange(cb: (ev: GatewayEvent | null) => void): () => void {
    this.listeners.push(cb);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== cb);
    };
  }

  private notify(ev: GatewayEvent | null): void {
    for (const cb of this.listeners) cb(ev);
  }

  /** Seed from the snapshot endpoints, then follow the event stream. */
  async start(): Promise<void> {
    await this.refresh();
    this.stream = new EventStream(this.gateway.eventsUrl(), (ev) => this.onStreamEvent(ev), {
      pollUrl: `${this.gateway.baseUrl}/operators`,
      pollMs: 1000,
    });
    void this.stream.start();
  }

  stop(): void {
    this.stream?.stop();
  }

  get streaming(): boolean {
    return this.stream?.mode === "stream";
  }

  async refresh(): Promise<void> {
    try {
      const body = await this.gateway.operators();
      this.session = body.session;
      this.scenario = body.scenario;
      for (const summary of body.operators) this.seedOperator(summary);
      this.metrics = await this.gateway.sessions();
      this.gatewayOk = true;
    } catch {
      this.gatewayOk = false;
    }
    this.notify(null);
  }

  private seedOperator(summary: OperatorSummary): void {
    const existing = this.operators.get(summary.op_id);
    const trail = existing?.trail ?? [];
    if (summary.position) trail.push(summary.position);
    this.operators.set(summary.op_id, { ...summary, trail, lastEventT: 0 });
    if (!this.timelines.has(summary.op_id)) this.timelines.set(summary.op_id, []);
  }

  private onStreamEvent(ev: SseEvent): void {
    let payload: GatewayEvent;
    try {
      payload = JSON.parse(ev.data) as GatewayEvent;
    } catch {
      return;
    }
    this.applyEvent(payload);
  }

  /** Apply one gateway event; exported for tests and replay tooling. */
  applyEvent(ev: GatewayEvent): void {
    this.gatewayOk = true;
    const view = this.operators.get(ev.op_id);
    if (!view) {
      // an operator we have not seen yet: resync in the background
      void this.refresh();
      return;
    }
    view.lastEventT = ev.t;
    if (ev.session) this.session = ev.session;
    switch (ev.kind) {
      case "update": {
        if (ev.phase) view.phase = ev.phase as Phase;
        if (ev.icon) view.icon = ev.icon as IconColor;
        if (ev.flags) view.flags = ev.flags as GlobalFlags;
        if (ev.battery !== undefined) view.battery = ev.battery;
        if (ev.last_seq !== undefined) view.last_seq = ev.last_seq;
        if (ev.position) {
          view.position = ev.position;
          const last = view.trail[view.trail.length - 1];
          if (!last || last[0] !== ev.position[0] || last[1] !== ev.position[1]) {
            view.trail.push(ev.position);
            if (view.trail.length > TRAIL_LIMIT) view.trail.shift();
          }
        }
        break;
      }
      case "warning": {
        if (ev.icon) view.icon = ev.icon as IconColor;
        if (ev.flags) view.flags = ev.flags as GlobalFlags;
        this.timelines.get(ev.op_id)?.push({
          t: ev.t,
          flags: ev.flags as GlobalFlags,
          icon: ev.icon as IconColor,
        });
        break;
      }
      case "phase": {
        if (ev.phase) view.phase = ev.phase as Phase;
        break;
      }
      default:
        break; // gap and friends carry no view change beyond counters
    }
    this.notify(ev);
  }

  snapshot(): StoreSnapshot {
    return {
      operators: [...this.operators.values()].sort((a, b) => a.op_id.localeCompare(b.op_id)),
      session: this.session,
      scenario: this.scenario,
      gatewayOk: this.gatewayOk,
      streaming: this.streaming,
      metrics: this.metrics,
    };
  }

  timeline(opId: string): TimelineEntry[] {
    return this.timelines.get(opId) ?? [];
  }

  /** Session metrics rows belonging to one operator (labels are
   * "session" for single-operator sessions, "session:op" otherwise). */
  metricsFor(opId: string): SessionMetricsRow[] {
    return this.metrics.filter((m) => m.label.endsWith(`:${opId}`) || !m.label.includes(":"));
  }
}
