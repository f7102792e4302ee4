/**
 * Local mirror of one table's head grid, fed by stream events.
 *
 * The replica owns the two client-side soundness checks: the seq audit
 * (event seqs must step by exactly 1 once a baseline is set; any gap is
 * counted and surfaced, never papered over) and chain verification
 * (every incoming commit's hashes are recomputed and linked against the
 * previous head).  The state hash over the replica's cells is what the
 * debug panel exposes; at quiescence it must equal the server head's
 * grid_hash.
 */

import {
  Cell,
  Commit,
  CommitEventPayload,
  StreamEvent,
  TableSpec,
  checkCommit,
  gridHash,
} from "./wire.js";

export interface IngestResult {
  kind: StreamEvent["kind"];
  payload: any;
  applied: boolean;
}

export class Replica {
  readonly spec: TableSpec;
  cells: Cell[] = [];
  head: Commit | null = null;
  lastSeq = 0;
  /** True once a snapshot or resumed backlog has set the seq baseline. */
  baselined = false;
  seqGaps = 0;
  chainFaults: string[] = [];

  constructor(spec: TableSpec) {
    this.spec = spec;
  }

  get version(): number {
    return this.head?.version ?? 0;
  }

  /** SHA-256 over the canonical cells; comparable to commit grid_hash. */
  stateHash(): string {
    return gridHash(this.cells);
  }

  /**
   * Feeds one stream event through the audit and, for snapshot and
   * commit events, into the grid.  Other kinds only advance the cursor;
   * the caller routes their payloads.
   */
  ingest(ev: StreamEvent): IngestResult {
    if (!this.baselined) {
      // first event of the connection fixes the cursor; a fresh
      // subscription opens with a snapshot whose seq is the current tail
      this.baselined = true;
    } else if (ev.seq !== this.lastSeq + 1) {
      this.seqGaps += 1;
    }
    this.lastSeq = ev.seq;

    if (ev.kind === "snapshot" || ev.kind === "commit") {
      this.applyCommit(ev.payload as CommitEventPayload, ev.kind === "commit");
      return { kind: ev.kind, payload: ev.payload, applied: true };
    }
    return { kind: ev.kind, payload: ev.payload, applied: false };
  }

  private applyCommit(payload: CommitEventPayload, linked: boolean): void {
    const commit = payload.commit;
    // a replayed backlog can include commits at or below the snapshot
    // version; applying the newest grid is idempotent either way
    const parent = linked && this.head !== null && commit.version === this.head.version + 1
      ? this.head
      : null;
    const fault = checkCommit(commit, parent);
    if (fault !== null) this.chainFaults.push(fault);
    if (this.head === null || commit.version >= this.head.version) {
      this.head = commit;
      this.cells = commit.grid.map((c) => ({ ...c }));
    }
  }
}
