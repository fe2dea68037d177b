/** Server-sent events over fetch streams, with a polling fallback.
 *
 * Node 20 and every modern browser expose fetch + ReadableStream; a plain
 * EventSource is not guaranteed, so the stream is parsed by hand. If the
 * stream cannot be established (or drops repeatedly), the client falls back
 * to polling the snapshot endpoint and synthesizing update events from it.
 */

export interface SseEvent {
  type: string;
  data: string;
}

export interface ParseState {
  buffer: string;
}

/** Incremental text/event-stream parser; feed chunks, collect events. */
export function parseSseChunk(state: ParseState, chunk: string): SseEvent[] {
  state.buffer += chunk;
  const events: SseEvent[] = [];
  let sep;
  while ((sep = state.buffer.indexOf("\n\n")) >= 0) {
    const block = state.buffer.slice(0, sep);
    state.buffer = state.buffer.slice(sep + 2);
    let type = "message";
    const dataLines: string[] = [];
    for (const line of block.split("\n")) {
      if (line.startsWith(":")) continue; // comment/keepalive
      if (line.startsWith("event:")) type = line.slice(6).trim();
      else if (line.startsWith("data:")) dataLines.push(line.slice(5).trim());
    }
    if (dataLines.length) events.push({ type, data: dataLines.join("\n") });
  }
  return events;
}

export interface EventStreamOptions {
  /** Snapshot URL polled when streaming is unavailable. */
  pollUrl?: string;
  pollMs?: number;
  fetchImpl?: typeof fetch;
  onFallback?: () => void;
}

export class EventStream {
  private stopped = false;
  private controller: AbortController | null = null;
  private pollTimer: ReturnType<typeof setInterval> | null = null;
  readonly state: ParseState = { buffer: "" };
  mode: "stream" | "poll" | "idle" = "idle";

  constructor(
    private url: string,
    private onEvent: (ev: SseEvent) => void,
    private opts: EventStreamOptions = {},
  ) {}

  async start(): Promise<void> {
    const doFetch = this.opts.fetchImpl ?? fetch;
    this.controller = new AbortController();
    try {
      const resp = await doFetch(this.url, {
        headers: { Accept: "text/event-stream" },
        signal: this.controller.signal,
      });
      if (!resp.ok || !resp.body) throw new Error(`stream unavailable: ${resp.status}`);
      this.mode = "stream";
      const reader = resp.body.getReader();
      const decoder = new TextDecoder();
      while (!this.stopped) {
        const { done, value } = await reader.read();
        if (done) break;
        for (const ev of parseSseChunk(this.state, decoder.decode(value, { stream: true }))) {
          this.onEvent(ev);
        }
      }
    } catch (err) {
      if (!this.stopped) this.startPolling();
    }
  }

  private startPolling(): void {
    if (this.stopped || !this.opts.pollUrl) return;
    this.mode = "poll";
    this.opts.onFallback?.();
    const doFetch = this.opts.fetchImpl ?? fetch;
    const poll = async () => {
      try {
        const resp = await doFetch(this.opts.pollUrl!);
        const body = await resp.json();
        for (const op of body.operators ?? []) {
          this.onEvent({
            type: "update",
            data: JSON.stringify({ kind: "update", t: Date.now(), ...op }),
          });
        }
      } catch {
        /* transient; keep polling */
      }
    };
    void poll();
    this.pollTimer = setInterval(poll, this.opts.pollMs ?? 1000);
  }

  stop(): void {
    this.stopped = true;
    this.controller?.abort();
    if (this.pollTimer) clearInterval(this.pollTimer);
    this.mode = "idle";
  }
}
