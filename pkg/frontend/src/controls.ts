/** Sampling-period and query-filter commands with ack reconciliation.
 *
 * Commands are optimistic in the UI sense only: the pending state is shown
 * immediately, but nothing is treated as applied until the node's ack comes
 * back through the gateway. A disconnected operator disables the controls;
 * if a command races a disconnect anyway, the error lands in the state.
 */

import type { GatewayClient } from "./gateway.js";
import type { ConsoleStore } from "./store.js";

export type CommandPhase = "idle" | "pending" | "acked" | "error";

export interface CommandState {
  phase: CommandPhase;
  label: string;
  detail?: string;
  newestSeq?: number;
}

export class ControlPanel {
  state: CommandState = { phase: "idle", label: "" };
  readonly log: CommandState[] = [];

  constructor(
    private gateway: GatewayClient,
    private store: ConsoleStore,
    readonly opId: string,
  ) {}

  /** Controls are disabled while the operator is disconnected. */
  get enabled(): boolean {
    return this.store.operators.get(this.opId)?.phase !== "disconnected";
  }

  get disabledReason(): string | null {
    return this.enabled ? null : "operator is disconnected; commands cannot reach the node";
  }

  private transition(state: CommandState): CommandState {
    this.state = state;
    this.log.push(state);
    return state;
  }

  async setPeriod(periodMs: number): Promise<CommandState> {
    if (!this.enabled) {
      return this.transition({ phase: "error", label: `period ${periodMs} ms`, detail: this.disabledReason! });
    }
    this.transition({ phase: "pending", label: `period ${periodMs} ms` });
    const result = await this.gateway.setPeriod(this.opId, periodMs);
    if (result.ack) {
      return this.transition({
        phase: "acked",
        label: `period ${periodMs} ms`,
        newestSeq: result.newest_seq,
      });
    }
    return this.transition({
      phase: "error",
      label: `period ${periodMs} ms`,
      detail: result.error ?? `HTTP ${result.status}`,
    });
  }

  async setFilter(sensors: string[] | "all"): Promise<CommandState> {
    const label = sensors === "all" ? "filter: all sensors" : `filter: {${sensors.join(", ")}}`;
    if (!this.enabled) {
      return this.transition({ phase: "error", label, detail: this.disabledReason! });
    }
    this.transition({ phase: "pending", label });
    const result = await this.gateway.setFilter(this.opId, sensors);
    if (result.ack) {
      return this.transition({ phase: "acked", label, newestSeq: result.newest_seq });
    }
    return this.transition({ phase: "error", label, detail: result.error ?? `HTTP ${result.status}` });
  }
}
