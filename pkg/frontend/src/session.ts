/**
 * One user's connection to one table: a live replica fed by the event
 * stream, an edit brush, history scrubbing, overlay state, and the
 * comment and like flows.
 *
 * Mutations are fire-and-confirm: the request carries the replica's
 * version as base_version and the grid only changes when the resulting
 * commit arrives back over the stream.  A conflicted edit is rebased
 * onto the head embedded in the 409 and retried exactly once; a second
 * conflict surfaces a banner instead of looping.
 *
 * Scrub mode is strictly read-only and swaps the view to a fetched
 * historical commit.  The stream is closed while scrubbing and reopened
 * with the saved cursor on return to live, so the replica replays the
 * missed events with no seq gap.
 */

import { ApiClient, ApiError, GridPostResult, RankedComment } from "./api.js";
import { Replica } from "./replica.js";
import { EventStream, EventStreamOptions, StreamStatus } from "./sse.js";
import { SunPosition, buildingHeights, checkSun, shadowMask } from "./shadow.js";
import {
  Cell,
  CellEdit,
  Comment,
  Layer,
  ReactionEventPayload,
  StreamEvent,
  TableSpec,
  cellCount,
  cellIndex,
} from "./wire.js";

export type Mode =
  | { kind: "live" }
  | { kind: "scrub"; version: number; grid: Cell[] };

export interface OverlayState {
  shadow: boolean;
  access: boolean;
  heatmap: boolean;
}

export type PaintOutcome =
  | { sent: false; reason: string }
  | { sent: true; ok: true; version: number; absorbed: boolean }
  | { sent: true; ok: false; reason: string };

export interface SessionApi {
  streamUrl(table: string): string;
  listTables(): ReturnType<ApiClient["listTables"]>;
  getCommit(table: string, version: number): ReturnType<ApiClient["getCommit"]>;
  postEdits(
    table: string, author: string, source: string, baseVersion: number, edits: CellEdit[],
  ): Promise<GridPostResult>;
  postComment(
    table: string, author: string, text: string, anchor: { col: number; row: number },
  ): ReturnType<ApiClient["postComment"]>;
  postLike(table: string, commentId: number, author: string): ReturnType<ApiClient["postLike"]>;
}

export interface SessionStreamHandle {
  start(): void;
  close(): void;
}

export interface SessionOptions {
  server: string;
  table: string;
  author?: string;
  /** Read-only presentation mode; all editing surfaces are disabled. */
  projector?: boolean;
  api?: SessionApi;
  streamFactory?: (url: string, opts: EventStreamOptions) => SessionStreamHandle;
  fetchFn?: typeof fetch;
  /** Called after every state change; the app repaints from here. */
  onChange?: () => void;
}

export interface DebugState {
  state_hash: string;
  version: number;
  last_seq: number;
  seq_gaps: number;
  chain_ok: boolean;
  mode: string;
  pending: number;
  stream: StreamStatus;
}

const DEFAULT_SUN: SunPosition = { azimuth_deg: 225, elevation_deg: 35 };

export class Session {
  readonly table: string;
  readonly author: string;
  readonly projector: boolean;

  spec!: TableSpec;
  replica!: Replica;
  mode: Mode = { kind: "live" };
  brush = 0;
  sun: SunPosition = { ...DEFAULT_SUN };
  overlays: OverlayState = { shadow: false, access: false, heatmap: false };
  banner: string | null = null;
  pending = 0;

  comments: Comment[] = [];
  likeCounts = new Map<number, number>();
  heatmapCounts: number[] = [];
  layers = new Map<string, Layer>();

  private readonly api: SessionApi;
  private readonly makeStream: (url: string, opts: EventStreamOptions) => SessionStreamHandle;
  private readonly onChange: () => void;
  private stream: SessionStreamHandle | null = null;
  private streamStatus: StreamStatus = "closed";
  private shadowCache: { key: string; mask: boolean[] } | null = null;
  private closed = false;

  constructor(opts: SessionOptions) {
    this.table = opts.table;
    this.author = opts.author ?? "anonymous";
    this.projector = opts.projector ?? false;
    this.api = opts.api ?? new ApiClient(opts.server, opts.fetchFn);
    this.makeStream = opts.streamFactory
      ?? ((url, streamOpts) => new EventStream(url, { ...streamOpts, fetchFn: opts.fetchFn }));
    this.onChange = opts.onChange ?? (() => {});
  }

  /** Fetches the table spec and opens the stream; resolves after the
   * snapshot event has seeded the replica. */
  async start(): Promise<void> {
    const tables = await this.api.listTables();
    const summary = tables.find((t) => t.name === this.table);
    if (summary === undefined) {
      throw new Error(`server has no table named ${this.table}`);
    }
    this.spec = summary.spec;
    this.replica = new Replica(this.spec);
    this.heatmapCounts = new Array(cellCount(this.spec)).fill(0);

    const seeded = new Promise<void>((resolve) => {
      let done = false;
      this.openStream(undefined, () => {
        if (!done) {
          done = true;
          resolve();
        }
      });
    });
    await seeded;
  }

  close(): void {
    this.closed = true;
    this.stream?.close();
    this.stream = null;
  }

  private openStream(since: number | undefined, onFirstEvent?: () => void): void {
    let sawEvent = false;
    this.stream = this.makeStream(this.api.streamUrl(this.table), {
      since,
      onEvent: (ev) => {
        this.handleEvent(ev);
        if (!sawEvent) {
          sawEvent = true;
          onFirstEvent?.();
        }
      },
      onStatus: (status) => {
        this.streamStatus = status;
        this.onChange();
      },
    });
    this.stream.start();
  }

  private handleEvent(ev: StreamEvent): void {
    const res = this.replica.ingest(ev);
    if (res.kind === "comment") {
      const comment = res.payload as Comment;
      this.comments.push(comment);
      if (!this.likeCounts.has(comment.id)) this.likeCounts.set(comment.id, 0);
      const { col, row } = comment.anchor;
      if (col !== undefined && row !== undefined) {
        this.heatmapCounts[cellIndex(this.spec, col, row)] += 1;
      }
    } else if (res.kind === "reaction") {
      // the server emits one event per distinct (comment, author) pair,
      // so counting events reproduces the like counts exactly
      const r = res.payload as ReactionEventPayload;
      this.likeCounts.set(r.comment_id, (this.likeCounts.get(r.comment_id) ?? 0) + 1);
    } else if (res.kind === "layer") {
      const layer = res.payload as Layer;
      this.layers.set(layer.name, layer);
    }
    this.onChange();
  }

  // --- view ---------------------------------------------------------------

  get live(): boolean {
    return this.mode.kind === "live";
  }

  viewGrid(): Cell[] {
    return this.mode.kind === "scrub" ? this.mode.grid : this.replica.cells;
  }

  viewVersion(): number {
    return this.mode.kind === "scrub" ? this.mode.version : this.replica.version;
  }

  /** Client-computed shade mask for the current view and sun. */
  viewShadowMask(): boolean[] {
    const key = `${this.mode.kind}:${this.viewVersion()}:${this.sun.azimuth_deg}:${this.sun.elevation_deg}`;
    if (this.shadowCache?.key !== key) {
      const heights = buildingHeights(this.viewGrid(), this.spec);
      this.shadowCache = { key, mask: shadowMask(heights, this.spec, this.sun) };
    }
    return this.shadowCache.mask;
  }

  debug(): DebugState {
    return {
      state_hash: this.replica.stateHash(),
      version: this.replica.version,
      last_seq: this.replica.lastSeq,
      seq_gaps: this.replica.seqGaps,
      chain_ok: this.replica.chainFaults.length === 0,
      mode: this.mode.kind === "scrub" ? `scrub@${this.mode.version}` : "live",
      pending: this.pending,
      stream: this.streamStatus,
    };
  }

  // --- editing ------------------------------------------------------------

  setBrush(typeId: number): void {
    this.brush = typeId;
    this.onChange();
  }

  setSun(azimuthDeg: number, elevationDeg: number): void {
    const sun = { azimuth_deg: azimuthDeg, elevation_deg: elevationDeg };
    checkSun(sun);
    this.sun = sun;
    this.onChange();
  }

  toggleOverlay(name: keyof OverlayState): void {
    this.overlays[name] = !this.overlays[name];
    this.onChange();
  }

  /**
   * Paints one cell with the current brush.  Never sends a request in
   * scrub or projector mode.  On a version conflict the edit is rebased
   * onto the embedded head and retried once.
   */
  async paintCell(col: number, row: number): Promise<PaintOutcome> {
    if (this.projector) return { sent: false, reason: "projector mode is read-only" };
    if (this.mode.kind !== "live") return { sent: false, reason: "scrub mode is read-only" };
    if (col < 0 || col >= this.spec.ncols || row < 0 || row >= this.spec.nrows) {
      return { sent: false, reason: `cell (${col}, ${row}) is outside the grid` };
    }
    const edit: CellEdit = {
      index: cellIndex(this.spec, col, row),
      cell: { type_id: this.brush, rotation: 0 },
    };
    this.pending += 1;
    this.onChange();
    try {
      let base = this.replica.version;
      try {
        const res = await this.api.postEdits(this.table, this.author, "ui", base, [edit]);
        return this.paintOk(res);
      } catch (err) {
        if (!(err instanceof ApiError) || err.code !== "conflict" || err.head === undefined) {
          throw err;
        }
        base = err.head.version;
      }
      try {
        const res = await this.api.postEdits(this.table, this.author, "ui", base, [edit]);
        return this.paintOk(res);
      } catch (err) {
        if (err instanceof ApiError && err.code === "conflict") {
          this.banner = "edit conflicted twice; catch up with the stream and retry";
          return { sent: true, ok: false, reason: this.banner };
        }
        throw err;
      }
    } catch (err) {
      if (err instanceof ApiError) {
        this.banner = `edit rejected: ${err.message}`;
      } else {
        this.banner = "server unreachable; edit not saved";
      }
      return { sent: true, ok: false, reason: this.banner };
    } finally {
      this.pending -= 1;
      this.onChange();
    }
  }

  private paintOk(res: GridPostResult): PaintOutcome {
    this.banner = null;
    return { sent: true, ok: true, version: res.commit.version, absorbed: !res.created };
  }

  // --- history ------------------------------------------------------------

  /** Shows a historical version read-only; values outside 1..head clamp. */
  async scrub(version: number): Promise<void> {
    const head = this.replica.version;
    const v = Math.min(Math.max(Math.trunc(version), Math.min(1, head)), head);
    if (this.mode.kind === "live") {
      this.stream?.close();
      this.stream = null;
    }
    const commit = await this.api.getCommit(this.table, v);
    this.mode = { kind: "scrub", version: v, grid: commit.grid.map((c) => ({ ...c })) };
    this.onChange();
  }

  /** Returns to the live view, resuming the stream after the saved seq. */
  backToLive(): void {
    if (this.mode.kind === "live") return;
    this.mode = { kind: "live" };
    if (!this.closed) this.openStream(this.replica.lastSeq);
    this.onChange();
  }

  // --- feedback -----------------------------------------------------------

  /** Posts a comment; the list updates when the event comes back. */
  async postComment(text: string, col: number, row: number): Promise<{ ok: boolean; error?: string }> {
    if (this.projector) return { ok: false, error: "projector mode is read-only" };
    if (text.trim() === "") return { ok: false, error: "comment text must not be empty" };
    try {
      await this.api.postComment(this.table, this.author, text, { col, row });
      return { ok: true };
    } catch (err) {
      return { ok: false, error: err instanceof ApiError ? err.message : "server unreachable" };
    }
  }

  /** Likes a comment; idempotent on the server per author. */
  async like(commentId: number): Promise<{ ok: boolean; error?: string }> {
    if (this.projector) return { ok: false, error: "projector mode is read-only" };
    try {
      await this.api.postLike(this.table, commentId, this.author);
      return { ok: true };
    } catch (err) {
      return { ok: false, error: err instanceof ApiError ? err.message : "server unreachable" };
    }
  }

  /** Comments ranked like the server: likes desc, then age, then id. */
  rankedComments(): RankedComment[] {
    return this.comments
      .map((comment) => ({ comment, like_count: this.likeCounts.get(comment.id) ?? 0 }))
      .sort((a, b) =>
        b.like_count - a.like_count
        || a.comment.created_at_ms - b.comment.created_at_ms
        || a.comment.id - b.comment.id);
  }
}
