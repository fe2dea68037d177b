/** Thin REST client for the monitoring gateway. */

import type {
  HistoryEntry,
  OperatorDetail,
  OperatorsResponse,
  SessionMetricsRow,
} from "./types.js";

export class GatewayError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
  }
}

export interface CommandResult {
  ack: boolean;
  newest_seq?: number;
  error?: string;
  status: number;
}

export class GatewayClient {
  constructor(readonly baseUrl: string, private fetchImpl: typeof fetch = fetch) {}

  private async getJson<T>(path: string): Promise<T> {
    const resp = await this.fetchImpl(`${this.baseUrl}${path}`);
    if (!resp.ok) throw new GatewayError(`GET ${path} -> ${resp.status}`, resp.status);
    return (await resp.json()) as T;
  }

  operators(): Promise<OperatorsResponse> {
    return this.getJson("/operators");
  }

  async operatorDetail(opId: string): Promise<OperatorDetail> {
    const body = await this.getJson<{ operator: OperatorDetail }>(`/operators/${opId}`);
    return body.operator;
  }

  async history(opId: string, afterSeq = 0, limit = 500): Promise<HistoryEntry[]> {
    const body = await this.getJson<{ entries: HistoryEntry[] }>(
      `/operators/${opId}/history?after_seq=${afterSeq}&limit=${limit}`,
    );
    return body.entries;
  }

  async sessions(): Promise<SessionMetricsRow[]> {
    const body = await this.getJson<{ sessions: SessionMetricsRow[] }>("/sessions");
    return body.sessions;
  }

  private async post(path: string, payload: unknown): Promise<CommandResult> {
    const resp = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    const body = (await resp.json()) as { ack?: boolean; newest_seq?: number; error?: string };
    return { ack: Boolean(body.ack), newest_seq: body.newest_seq, error: body.error, status: resp.status };
  }

  setPeriod(opId: string, periodMs: number): Promise<CommandResult> {
    return this.post(`/operators/${opId}/period`, { period_ms: periodMs });
  }

  setFilter(opId: string, sensors: string[] | "all"): Promise<CommandResult> {
    const payload = sensors === "all" ? { wildcard: true, sensors: [] } : { wildcard: false, sensors };
    return this.post(`/operators/${opId}/filter`, payload);
  }

  eventsUrl(): string {
    return `${this.baseUrl}/events`;
  }
}
