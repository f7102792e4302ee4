import { describe, expect, it } from "vitest";

import { ApiError, GridPostResult, RankedComment, ReactionResult } from "../src/api.js";
import { Session, SessionApi, SessionStreamHandle } from "../src/session.js";
import { EventStreamOptions } from "../src/sse.js";
import {
  Cell,
  CellEdit,
  Comment,
  Commit,
  StreamEvent,
  TableSpec,
  ZERO_HASH,
  cellIndex,
} from "../src/wire.js";
import { demoSpec, mkCommit, until } from "./server.js";

const NCOLS = 4;
const NROWS = 3;

function emptyGrid(): Cell[] {
  return Array.from({ length: NCOLS * NROWS }, () => ({ type_id: 0, rotation: 0 }));
}

type EditResponder = () => GridPostResult;

class FakeApi implements SessionApi {
  spec: TableSpec = demoSpec("t", NCOLS, NROWS);
  commits: Commit[] = [];
  editCalls: { base: number; edits: CellEdit[] }[] = [];
  editResponders: EditResponder[] = [];
  commentCalls: { author: string; text: string; anchor: { col: number; row: number } }[] = [];
  likeCalls: { commentId: number; author: string }[] = [];

  streamUrl(table: string): string {
    return `fake://${table}/stream`;
  }

  async listTables() {
    return [{ name: "t", head_version: this.commits.length, spec: this.spec }];
  }

  async getCommit(_table: string, version: number): Promise<Commit> {
    const c = this.commits[version - 1];
    if (c === undefined) {
      throw new ApiError(404, "unknown_version", `no version ${version}`);
    }
    return c;
  }

  async postEdits(
    _table: string, _author: string, _source: string, base: number, edits: CellEdit[],
  ): Promise<GridPostResult> {
    this.editCalls.push({ base, edits });
    const responder = this.editResponders.shift();
    if (responder === undefined) throw new Error("unexpected postEdits call");
    return responder();
  }

  async postComment(
    _table: string, author: string, text: string, anchor: { col: number; row: number },
  ): Promise<Comment> {
    this.commentCalls.push({ author, text, anchor });
    return {
      id: this.commentCalls.length,
      anchor,
      text,
      author,
      created_at_ms: 1,
      version_at_creation: this.commits.length,
    };
  }

  async postLike(_table: string, commentId: number, author: string): Promise<ReactionResult> {
    this.likeCalls.push({ commentId, author });
    return { comment_id: commentId, like_count: 1 };
  }
}

class FakeStream implements SessionStreamHandle {
  started = false;
  closed = false;
  constructor(readonly url: string, readonly opts: EventStreamOptions) {}
  start(): void {
    this.started = true;
  }
  close(): void {
    this.closed = true;
  }
  emit(ev: StreamEvent): void {
    this.opts.onEvent(ev);
  }
}

interface Rig {
  api: FakeApi;
  session: Session;
  streams: FakeStream[];
  emit(ev: StreamEvent): void;
}

function conflict(head: Commit): ApiError {
  return new ApiError(
    409, "conflict", `base_version is stale, head is ${head.version}`, head,
  );
}

async function rig(opts: { projector?: boolean } = {}): Promise<Rig> {
  const api = new FakeApi();
  const c1 = mkCommit(1, ZERO_HASH, emptyGrid(), "system");
  api.commits.push(c1);
  const streams: FakeStream[] = [];
  const session = new Session({
    server: "fake://",
    table: "t",
    author: "alice",
    projector: opts.projector,
    api,
    streamFactory: (url, streamOpts) => {
      const s = new FakeStream(url, streamOpts);
      streams.push(s);
      return s;
    },
  });
  const started = session.start();
  await until(() => streams.length === 1 && streams[0].started, "stream opened");
  streams[0].emit({ seq: 1, kind: "snapshot", payload: { commit: c1, diff: [] } });
  await started;
  return { api, session, streams, emit: (ev) => streams[streams.length - 1].emit(ev) };
}

/** Appends the next commit to the fake server's history. */
function appendCommit(api: FakeApi, mutate: (grid: Cell[]) => void, author = "alice"): Commit {
  const prev = api.commits[api.commits.length - 1];
  const grid = prev.grid.map((c) => ({ ...c }));
  mutate(grid);
  const c = mkCommit(prev.version + 1, prev.commit_hash, grid, author);
  api.commits.push(c);
  return c;
}

describe("Session.start", () => {
  it("seeds the replica from the snapshot event", async () => {
    const { session } = await rig();
    expect(session.spec.ncols).toBe(NCOLS);
    expect(session.replica.version).toBe(1);
    const d = session.debug();
    expect(d.last_seq).toBe(1);
    expect(d.mode).toBe("live");
    expect(d.state_hash).toBe(session.replica.stateHash());
  });
});

describe("Session.paintCell", () => {
  it("sends one edit with the local head as base_version", async () => {
    const { api, session, emit } = await rig();
    session.setBrush(2);
    const c2 = appendCommit(api, (g) => {
      g[cellIndex(api.spec, 1, 2)] = { type_id: 2, rotation: 0 };
    });
    api.editResponders.push(() => ({ commit: c2, created: true }));

    const outcome = await session.paintCell(1, 2);
    expect(outcome).toEqual({ sent: true, ok: true, version: 2, absorbed: false });
    expect(api.editCalls).toEqual([
      { base: 1, edits: [{ index: cellIndex(api.spec, 1, 2), cell: { type_id: 2, rotation: 0 } }] },
    ]);
    // fire-and-confirm: the grid changes only when the event arrives
    expect(session.replica.version).toBe(1);
    emit({ seq: 2, kind: "commit", payload: { commit: c2, diff: [] } });
    expect(session.replica.version).toBe(2);
    expect(session.replica.stateHash()).toBe(c2.grid_hash);
    expect(session.debug().seq_gaps).toBe(0);
  });

  it("rebases onto the embedded head and retries exactly once", async () => {
    const { api, session } = await rig();
    // someone else advanced the table to version 3
    appendCommit(api, (g) => { g[0] = { type_id: 1, rotation: 0 }; }, "bob");
    const c3 = appendCommit(api, (g) => { g[1] = { type_id: 1, rotation: 0 }; }, "bob");
    const c4 = appendCommit(api, (g) => { g[2] = { type_id: 1, rotation: 0 }; });
    api.editResponders.push(() => { throw conflict(c3); });
    api.editResponders.push(() => ({ commit: c4, created: true }));

    const outcome = await session.paintCell(2, 0);
    expect(outcome).toMatchObject({ sent: true, ok: true, version: 4 });
    expect(api.editCalls.length).toBe(2);
    expect(api.editCalls[0].base).toBe(1);
    expect(api.editCalls[1].base).toBe(3);
    expect(api.editCalls[0].edits).toEqual(api.editCalls[1].edits);
    expect(session.banner).toBeNull();
  });

  it("stops after a second conflict and raises the banner", async () => {
    const { api, session } = await rig();
    const c3 = appendCommit(api, (g) => { g[0] = { type_id: 1, rotation: 0 }; }, "bob");
    const c4 = appendCommit(api, (g) => { g[1] = { type_id: 1, rotation: 0 }; }, "bob");
    api.editResponders.push(() => { throw conflict(c3); });
    api.editResponders.push(() => { throw conflict(c4); });

    const outcome = await session.paintCell(2, 0);
    expect(outcome).toMatchObject({ sent: true, ok: false });
    expect(api.editCalls.length).toBe(2);
    expect(session.banner).toBe("edit conflicted twice; catch up with the stream and retry");
    expect(session.pending).toBe(0);
  });

  it("reports a rejected edit and an unreachable server distinctly", async () => {
    const { api, session } = await rig();
    api.editResponders.push(() => {
      throw new ApiError(400, "invalid_grid", "type_id 9 out of range");
    });
    let outcome = await session.paintCell(0, 0);
    expect(outcome).toMatchObject({ sent: true, ok: false });
    expect(session.banner).toBe("edit rejected: type_id 9 out of range");

    api.editResponders.push(() => { throw new TypeError("fetch failed"); });
    outcome = await session.paintCell(0, 0);
    expect(outcome).toMatchObject({ sent: true, ok: false });
    expect(session.banner).toBe("server unreachable; edit not saved");
  });

  it("refuses cells outside the grid without a request", async () => {
    const { api, session } = await rig();
    const outcome = await session.paintCell(NCOLS, 0);
    expect(outcome).toMatchObject({ sent: false });
    expect(api.editCalls.length).toBe(0);
  });
});

describe("Session scrubbing", () => {
  it("is read-only and never sends a mutation request", async () => {
    const { api, session, streams, emit } = await rig();
    appendCommit(api, (g) => { g[0] = { type_id: 1, rotation: 0 }; }, "bob");
    const c3 = appendCommit(api, (g) => { g[1] = { type_id: 3, rotation: 0 }; }, "bob");
    emit({ seq: 2, kind: "commit", payload: { commit: api.commits[1], diff: [] } });
    emit({ seq: 3, kind: "commit", payload: { commit: c3, diff: [] } });

    await session.scrub(2);
    expect(streams[0].closed).toBe(true);
    expect(session.live).toBe(false);
    expect(session.viewVersion()).toBe(2);
    expect(session.viewGrid()).toEqual(api.commits[1].grid);
    // the live replica is untouched underneath
    expect(session.replica.version).toBe(3);

    const outcome = await session.paintCell(0, 0);
    expect(outcome).toEqual({ sent: false, reason: "scrub mode is read-only" });
    expect(api.editCalls.length).toBe(0);
    expect(session.debug().mode).toBe("scrub@2");
  });

  it("clamps the requested version into 1..head", async () => {
    const { api, session, emit } = await rig();
    const c2 = appendCommit(api, (g) => { g[0] = { type_id: 1, rotation: 0 }; }, "bob");
    emit({ seq: 2, kind: "commit", payload: { commit: c2, diff: [] } });

    await session.scrub(99);
    expect(session.viewVersion()).toBe(2);
    await session.scrub(-5);
    expect(session.viewVersion()).toBe(1);
    await session.scrub(0);
    expect(session.viewVersion()).toBe(1);
  });

  it("returns to live on a fresh stream resumed after the saved seq", async () => {
    const { api, session, streams, emit } = await rig();
    await session.scrub(1);
    expect(streams.length).toBe(1);

    session.backToLive();
    expect(session.live).toBe(true);
    expect(streams.length).toBe(2);
    expect(streams[1].opts.since).toBe(1);
    expect(streams[1].started).toBe(true);

    // a commit that happened while we were scrubbed back arrives now
    const c2 = appendCommit(api, (g) => { g[3] = { type_id: 4, rotation: 0 }; }, "bob");
    emit({ seq: 2, kind: "commit", payload: { commit: c2, diff: [] } });
    expect(session.replica.version).toBe(2);
    expect(session.debug().seq_gaps).toBe(0);
  });
});

describe("Session projector mode", () => {
  it("blocks every mutating surface", async () => {
    const { api, session } = await rig({ projector: true });
    expect(await session.paintCell(0, 0)).toEqual(
      { sent: false, reason: "projector mode is read-only" },
    );
    expect(await session.postComment("hello", 0, 0)).toEqual(
      { ok: false, error: "projector mode is read-only" },
    );
    expect(await session.like(1)).toEqual(
      { ok: false, error: "projector mode is read-only" },
    );
    expect(api.editCalls.length).toBe(0);
    expect(api.commentCalls.length).toBe(0);
    expect(api.likeCalls.length).toBe(0);
  });
});

describe("Session feedback", () => {
  it("updates comments, likes, and heatmap from events only", async () => {
    const { api, session, emit } = await rig();
    const res = await session.postComment("more trees", 1, 1);
    expect(res.ok).toBe(true);
    expect(api.commentCalls.length).toBe(1);
    // no local optimism
    expect(session.comments.length).toBe(0);
    expect(session.heatmapCounts.every((n) => n === 0)).toBe(true);

    const wire: Comment = {
      id: 1,
      anchor: { col: 1, row: 1 },
      text: "more trees",
      author: "alice",
      created_at_ms: 1,
      version_at_creation: 1,
    };
    emit({ seq: 2, kind: "comment", payload: wire });
    expect(session.comments.length).toBe(1);
    expect(session.heatmapCounts[cellIndex(api.spec, 1, 1)]).toBe(1);
    expect(session.likeCounts.get(1)).toBe(0);

    emit({ seq: 3, kind: "reaction", payload: { comment_id: 1, author: "bob" } });
    expect(session.likeCounts.get(1)).toBe(1);
  });

  it("refuses empty comment text without a request", async () => {
    const { api, session } = await rig();
    const res = await session.postComment("   ", 0, 0);
    expect(res).toEqual({ ok: false, error: "comment text must not be empty" });
    expect(api.commentCalls.length).toBe(0);
  });

  it("ranks comments by likes, then by id", async () => {
    const { session, emit } = await rig();
    const mk = (id: number): Comment => ({
      id,
      anchor: { col: 0, row: 0 },
      text: `c${id}`,
      author: "alice",
      created_at_ms: id,
      version_at_creation: 1,
    });
    emit({ seq: 2, kind: "comment", payload: mk(1) });
    emit({ seq: 3, kind: "comment", payload: mk(2) });
    emit({ seq: 4, kind: "comment", payload: mk(3) });
    emit({ seq: 5, kind: "reaction", payload: { comment_id: 3, author: "a" } });
    emit({ seq: 6, kind: "reaction", payload: { comment_id: 3, author: "b" } });
    emit({ seq: 7, kind: "reaction", payload: { comment_id: 2, author: "a" } });
    const ranked: RankedComment[] = session.rankedComments();
    expect(ranked.map((r) => r.comment.id)).toEqual([3, 2, 1]);
    expect(ranked.map((r) => r.like_count)).toEqual([2, 1, 0]);
  });
});

describe("Session sun and overlays", () => {
  it("validates sun ranges and recomputes the mask per view", async () => {
    const { api, session, emit } = await rig();
    expect(() => session.setSun(400, 45)).toThrow(RangeError);
    expect(() => session.setSun(90, 0)).toThrow(RangeError);
    session.setSun(90, 45);
    expect(session.viewShadowMask().length).toBe(NCOLS * NROWS);
    expect(session.viewShadowMask().every((m) => m === false)).toBe(true);

    // a 12-floor tower at 36 m casts under a 45 degree sun
    const c2 = appendCommit(api, (g) => {
      g[cellIndex(api.spec, 2, 1)] = { type_id: 2, rotation: 0 };
    });
    emit({ seq: 2, kind: "commit", payload: { commit: c2, diff: [] } });
    expect(session.viewShadowMask().some((m) => m)).toBe(true);

    session.toggleOverlay("shadow");
    expect(session.overlays.shadow).toBe(true);
    session.toggleOverlay("shadow");
    expect(session.overlays.shadow).toBe(false);
  });
});
