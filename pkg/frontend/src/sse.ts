/**
 * Reconnecting reader for a table's event stream.
 *
 * Built on fetch + ReadableStream rather than EventSource so the same
 * code runs in the browser and under the node test runner, and so the
 * resume cursor is explicit: every reconnect asks for `since=<last seq>`
 * and the server replays exactly the missed suffix.  Frames follow the
 * text/event-stream shape (id/event/data lines, blank-line terminated,
 * ":" comment lines as heartbeats).
 */

import { StreamEvent } from "./wire.js";

export type StreamStatus = "connecting" | "open" | "retrying" | "closed";

export interface EventStreamOptions {
  /** Resume cursor; absent means open with a snapshot event. */
  since?: number;
  onEvent: (ev: StreamEvent) => void;
  onStatus?: (status: StreamStatus) => void;
  initialRetryMs?: number;
  maxRetryMs?: number;
  fetchFn?: typeof fetch;
}

export class EventStream {
  private readonly url: string;
  private readonly opts: EventStreamOptions;
  private readonly fetchFn: typeof fetch;
  private lastSeq: number | undefined;
  private retryMs: number;
  private closed = false;
  private controller: AbortController | null = null;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;
  private status: StreamStatus = "closed";

  constructor(streamUrl: string, opts: EventStreamOptions) {
    this.url = streamUrl;
    this.opts = opts;
    this.fetchFn = opts.fetchFn ?? fetch;
    this.lastSeq = opts.since;
    this.retryMs = opts.initialRetryMs ?? 500;
  }

  start(): void {
    if (this.closed) throw new Error("stream already closed");
    void this.run();
  }

  close(): void {
    this.closed = true;
    if (this.retryTimer !== null) clearTimeout(this.retryTimer);
    this.controller?.abort();
    this.setStatus("closed");
  }

  /** Seq of the last delivered event; reconnects resume after it. */
  get cursor(): number | undefined {
    return this.lastSeq;
  }

  private setStatus(status: StreamStatus): void {
    if (this.status !== status) {
      this.status = status;
      this.opts.onStatus?.(status);
    }
  }

  private buildUrl(): string {
    if (this.lastSeq === undefined) return this.url;
    const sep = this.url.includes("?") ? "&" : "?";
    return `${this.url}${sep}since=${this.lastSeq}`;
  }

  private async run(): Promise<void> {
    while (!this.closed) {
      this.setStatus("connecting");
      this.controller = new AbortController();
      try {
        const resp = await this.fetchFn(this.buildUrl(), {
          signal: this.controller.signal,
          headers: { Accept: "text/event-stream" },
        });
        if (!resp.ok || resp.body === null) {
          throw new Error(`stream request failed with status ${resp.status}`);
        }
        this.setStatus("open");
        this.retryMs = this.opts.initialRetryMs ?? 500;
        await this.consume(resp.body);
      } catch (err) {
        if (this.closed) break;
      }
      if (this.closed) break;
      this.setStatus("retrying");
      await new Promise<void>((resolve) => {
        this.retryTimer = setTimeout(resolve, this.retryMs);
      });
      this.retryMs = Math.min(this.retryMs * 2, this.opts.maxRetryMs ?? 10000);
    }
  }

  private async consume(body: ReadableStream<Uint8Array>): Promise<void> {
    const reader = body.getReader();
    const decoder = new TextDecoder();
    let buf = "";
    let data: string | null = null;
    for (;;) {
      const { done, value } = await reader.read();
      if (done) break;
      buf += decoder.decode(value, { stream: true });
      let nl: number;
      while ((nl = buf.indexOf("\n")) >= 0) {
        const line = buf.slice(0, nl).replace(/\r$/, "");
        buf = buf.slice(nl + 1);
        if (line === "") {
          if (data !== null) this.dispatch(data);
          data = null;
        } else if (line.startsWith("data:")) {
          const piece = line.slice(5).replace(/^ /, "");
          data = data === null ? piece : data + "\n" + piece;
        }
        // id: and event: lines duplicate fields inside data; comment
        // lines (":") are heartbeats; all are skipped
      }
    }
  }

  private dispatch(data: string): void {
    const ev = JSON.parse(data) as StreamEvent;
    this.lastSeq = ev.seq;
    this.opts.onEvent(ev);
  }
}
