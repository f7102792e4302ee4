import { describe, expect, it } from "vitest";

import { EventStream } from "../src/sse.js";
import { StreamEvent } from "../src/wire.js";

/** Response-shaped object whose body replays the given chunks.  When
 * hang is set the stream stays open until the request is aborted. */
function sseResponse(chunks: string[], hang = false, signal?: AbortSignal): Response {
  const enc = new TextEncoder();
  const body = new ReadableStream<Uint8Array>({
    start(controller) {
      for (const c of chunks) controller.enqueue(enc.encode(c));
      if (!hang) {
        controller.close();
      } else {
        signal?.addEventListener("abort", () => {
          try {
            controller.error(new Error("aborted"));
          } catch {
            // already closed
          }
        });
      }
    },
  });
  return { ok: true, status: 200, body } as unknown as Response;
}

function frame(seq: number, kind: string, payload: unknown): string {
  const data = JSON.stringify({ seq, kind, payload });
  return `id: ${seq}\nevent: ${kind}\ndata: ${data}\n\n`;
}

describe("EventStream", () => {
  it("parses frames across chunk boundaries and resumes with since", async () => {
    const urls: string[] = [];
    const events: StreamEvent[] = [];
    const statuses: string[] = [];

    const f1 = frame(1, "commit", { n: 1 });
    const f2 = frame(2, "comment", { n: 2 });
    // split mid-line, plus a heartbeat comment between frames
    const conn1 = [f1.slice(0, 17), f1.slice(17) + ": hb\n\n" + f2.slice(0, 3), f2.slice(3)];
    // CRLF endings and data split over two lines at a JSON token boundary
    const conn2 = [
      'id: 3\r\nevent: layer\r\ndata: {"seq":3,"kind":"layer",\r\ndata: "payload":{}}\r\n\r\n',
    ];

    let done: () => void;
    const finished = new Promise<void>((resolve) => { done = resolve; });
    const stream = new EventStream("http://fake/stream", {
      initialRetryMs: 5,
      onEvent: (ev) => {
        events.push(ev);
        if (ev.seq === 3) done();
      },
      onStatus: (s) => statuses.push(s),
      fetchFn: (async (url: string | URL | Request, init?: RequestInit) => {
        urls.push(String(url));
        if (urls.length === 1) return sseResponse(conn1);
        return sseResponse(conn2, true, init?.signal ?? undefined);
      }) as typeof fetch,
    });
    stream.start();
    await finished;
    stream.close();

    expect(events.map((e) => e.seq)).toEqual([1, 2, 3]);
    expect(events.map((e) => e.kind)).toEqual(["commit", "comment", "layer"]);
    expect(events[0].payload).toEqual({ n: 1 });
    expect(urls[0]).toBe("http://fake/stream");
    expect(urls[1]).toBe("http://fake/stream?since=2");
    expect(stream.cursor).toBe(3);
    expect(statuses[0]).toBe("connecting");
    expect(statuses).toContain("retrying");
    expect(statuses[statuses.length - 1]).toBe("closed");
  });

  it("opens with the configured resume cursor", async () => {
    const urls: string[] = [];
    let sawRequest: () => void;
    const requested = new Promise<void>((resolve) => { sawRequest = resolve; });
    const stream = new EventStream("http://fake/stream", {
      since: 7,
      onEvent: () => {},
      fetchFn: (async (url: string | URL | Request, init?: RequestInit) => {
        urls.push(String(url));
        sawRequest();
        return sseResponse([], true, init?.signal ?? undefined);
      }) as typeof fetch,
    });
    stream.start();
    await requested;
    stream.close();
    expect(urls[0]).toBe("http://fake/stream?since=7");
  });
});
