/**
 * Thin typed wrapper over the table server's HTTP API.  All bodies are
 * JSON; errors carry the server's stable error code, and a version
 * conflict exposes the current head so callers can rebase.
 */

import {
  Cell,
  CellEdit,
  Comment,
  Commit,
  Layer,
  TableSpec,
  TableSummary,
} from "./wire.js";

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;
  /** Current head commit, present on version conflicts. */
  readonly head?: Commit;

  constructor(status: number, code: string, message: string, head?: Commit) {
    super(message);
    this.status = status;
    this.code = code;
    this.head = head;
  }
}

export interface GridPostResult {
  commit: Commit;
  created: boolean;
}

export interface RankedComment {
  comment: Comment;
  like_count: number;
}

export interface ReactionResult {
  comment_id: number;
  like_count: number;
}

export class ApiClient {
  readonly baseUrl: string;
  private readonly fetchFn: typeof fetch;

  constructor(baseUrl: string, fetchFn?: typeof fetch) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.fetchFn = fetchFn ?? fetch;
  }

  streamUrl(table: string): string {
    return `${this.baseUrl}/api/tables/${table}/stream`;
  }

  private async request(method: string, path: string, body?: unknown): Promise<any> {
    const resp = await this.fetchFn(this.baseUrl + path, {
      method,
      headers: body !== undefined ? { "Content-Type": "application/json" } : undefined,
      body: body !== undefined ? JSON.stringify(body) : undefined,
    });
    if (resp.status === 204) return null;
    const text = await resp.text();
    const parsed = text === "" ? null : JSON.parse(text);
    if (!resp.ok) {
      const code = parsed?.error ?? "http_error";
      const message = parsed?.message ?? `request failed with status ${resp.status}`;
      throw new ApiError(resp.status, code, message, parsed?.head);
    }
    return parsed;
  }

  listTables(): Promise<TableSummary[]> {
    return this.request("GET", "/api/tables");
  }

  createTable(spec: TableSpec): Promise<TableSummary> {
    return this.request("POST", "/api/tables", spec);
  }

  getHead(table: string): Promise<Commit> {
    return this.request("GET", `/api/tables/${table}/head`);
  }

  getCommit(table: string, version: number): Promise<Commit> {
    return this.request("GET", `/api/tables/${table}/commits/${version}`);
  }

  getCommits(table: string, from: number, to: number): Promise<Commit[]> {
    return this.request("GET", `/api/tables/${table}/commits?from=${from}&to=${to}`);
  }

  postGrid(
    table: string, author: string, source: string, grid: Cell[], baseVersion?: number,
  ): Promise<GridPostResult> {
    const body: any = { author, source, grid: grid.map((c) => ({ ...c })) };
    if (baseVersion !== undefined) body.base_version = baseVersion;
    return this.request("POST", `/api/tables/${table}/grid`, body);
  }

  postEdits(
    table: string, author: string, source: string, baseVersion: number, edits: CellEdit[],
  ): Promise<GridPostResult> {
    const body = { author, source, base_version: baseVersion, edits };
    return this.request("POST", `/api/tables/${table}/grid`, body);
  }

  postComment(
    table: string, author: string, text: string, anchor: { col: number; row: number },
  ): Promise<Comment> {
    return this.request("POST", `/api/tables/${table}/comments`, { author, text, anchor });
  }

  postLike(table: string, commentId: number, author: string): Promise<ReactionResult> {
    return this.request("POST", `/api/tables/${table}/comments/${commentId}/reactions`, {
      author,
    });
  }

  getComments(table: string, top?: number): Promise<RankedComment[]> {
    const q = top !== undefined ? `?top=${top}` : "";
    return this.request("GET", `/api/tables/${table}/comments${q}`);
  }

  getHeatmap(table: string): Promise<Layer> {
    return this.request("GET", `/api/tables/${table}/comments/heatmap`);
  }

  getLayer(table: string, name: string): Promise<Layer> {
    return this.request("GET", `/api/tables/${table}/layers/${name}`);
  }
}
