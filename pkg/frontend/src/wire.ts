/**
 * Wire types and content hashing.
 *
 * Field names match the HTTP bodies one for one, so objects parsed from
 * the server can be re-encoded without a mapping layer and the hashes
 * computed here are byte-compatible with the server's.
 */

import { CanonicalValue, F, canonicalBytes, canonicalString, num } from "./canonical.js";
import { sha256Hex } from "./sha256.js";

export const ZERO_HASH = "0".repeat(64);

export interface RegistryEntry {
  id: number;
  name: string;
  color: [number, number, number];
  category: string;
  default_floors: number;
}

export interface TableSpec {
  name: string;
  ncols: number;
  nrows: number;
  cell_size_m: number;
  floor_height_m: number;
  origin_lat: number;
  origin_lon: number;
  rotation_deg: number;
  registry: RegistryEntry[];
}

export interface Cell {
  type_id: number;
  rotation: number;
  floors?: number;
}

export interface Commit {
  version: number;
  parent_hash: string;
  grid_hash: string;
  commit_hash: string;
  author: string;
  source: string;
  timestamp_ms: number;
  grid: Cell[];
}

export interface CellEdit {
  index: number;
  cell: Cell;
}

export interface DiffEntry {
  index: number;
  before: Cell;
  after: Cell;
}

export interface CommentAnchor {
  col?: number;
  row?: number;
  lat?: number;
  lon?: number;
}

export interface Comment {
  id: number;
  anchor: CommentAnchor;
  text: string;
  author: string;
  created_at_ms: number;
  version_at_creation: number;
}

export interface Layer {
  name: string;
  kind: "scalar_grid" | "mask_grid" | "metrics";
  values: number[] | boolean[] | { [key: string]: number };
  produced_from_version: number;
  producer: string;
}

export interface TableSummary {
  name: string;
  head_version: number;
  spec: TableSpec;
}

export interface StreamEvent {
  seq: number;
  kind: "snapshot" | "commit" | "comment" | "reaction" | "layer";
  payload: any;
}

export interface CommitEventPayload {
  commit: Commit;
  diff: DiffEntry[];
}

export interface ReactionEventPayload {
  comment_id: number;
  author: string;
}

/** Cell in canonical key order; floors appears only when set. */
export function cellToWire(cell: Cell): CanonicalValue {
  const w: { [key: string]: CanonicalValue } = {
    type_id: cell.type_id,
    rotation: cell.rotation,
  };
  if (cell.floors !== undefined && cell.floors !== null) w.floors = cell.floors;
  return w;
}

export function gridToWire(grid: Cell[]): CanonicalValue {
  return grid.map(cellToWire);
}

export function gridCanonical(grid: Cell[]): string {
  return canonicalString(gridToWire(grid));
}

export function gridHash(grid: Cell[]): string {
  return sha256Hex(canonicalBytes(gridToWire(grid)));
}

/**
 * Commit hash preimage: parent hash first, then version, author, source,
 * timestamp and the full grid.  Every stored byte of a commit is either
 * in this preimage or derived from it, which is what makes single-byte
 * log corruption detectable.
 */
export function commitPreimage(
  parentHash: string,
  version: number,
  author: string,
  source: string,
  timestampMs: number,
  grid: Cell[],
): string {
  return canonicalString({
    parent_hash: parentHash,
    version,
    author,
    source,
    timestamp_ms: timestampMs,
    grid: gridToWire(grid),
  });
}

export function commitHash(
  parentHash: string,
  version: number,
  author: string,
  source: string,
  timestampMs: number,
  grid: Cell[],
): string {
  const preimage = commitPreimage(parentHash, version, author, source, timestampMs, grid);
  return sha256Hex(new TextEncoder().encode(preimage));
}

export function commitToWire(c: Commit): CanonicalValue {
  return {
    version: c.version,
    parent_hash: c.parent_hash,
    grid_hash: c.grid_hash,
    commit_hash: c.commit_hash,
    author: c.author,
    source: c.source,
    timestamp_ms: c.timestamp_ms,
    grid: gridToWire(c.grid),
  };
}

/**
 * Checks a commit's declared hashes against its content and, when the
 * parent is known, the chain link.  Returns null when sound, else a
 * description of the first mismatch.
 */
export function checkCommit(c: Commit, parent: Commit | null): string | null {
  if (parent !== null && c.parent_hash !== parent.commit_hash) {
    return `version ${c.version} parent_hash does not match version ${parent.version}`;
  }
  // versions count from 1; the first commit links to the zero hash
  if (parent === null && c.version === 1 && c.parent_hash !== ZERO_HASH) {
    return "version 1 parent_hash is not the zero hash";
  }
  if (gridHash(c.grid) !== c.grid_hash) {
    return `version ${c.version} grid_hash does not match its grid`;
  }
  const expect = commitHash(
    c.parent_hash, c.version, c.author, c.source, c.timestamp_ms, c.grid,
  );
  if (expect !== c.commit_hash) {
    return `version ${c.version} commit_hash does not match its content`;
  }
  return null;
}

export function specToWire(spec: TableSpec): CanonicalValue {
  return {
    name: spec.name,
    ncols: spec.ncols,
    nrows: spec.nrows,
    cell_size_m: F(num(spec.cell_size_m)),
    floor_height_m: F(num(spec.floor_height_m)),
    origin_lat: F(num(spec.origin_lat)),
    origin_lon: F(num(spec.origin_lon)),
    rotation_deg: F(num(spec.rotation_deg)),
    registry: spec.registry.map((e) => ({
      id: e.id,
      name: e.name,
      color: [e.color[0], e.color[1], e.color[2]] as CanonicalValue,
      category: e.category,
      default_floors: e.default_floors,
    })),
  };
}

export function specCanonical(spec: TableSpec): string {
  return canonicalString(specToWire(spec));
}

export function cellCount(spec: TableSpec): number {
  return spec.ncols * spec.nrows;
}

export function cellIndex(spec: TableSpec, col: number, row: number): number {
  return row * spec.ncols + col;
}

/** Floors override if present, else the type's registry default. */
export function effectiveFloors(spec: TableSpec, cell: Cell): number {
  if (cell.floors !== undefined && cell.floors !== null) return cell.floors;
  return spec.registry[cell.type_id].default_floors;
}

export function categoryOf(spec: TableSpec, cell: Cell): string {
  return spec.registry[cell.type_id].category;
}
