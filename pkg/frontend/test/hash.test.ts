import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import { sha256Hex } from "../src/sha256.js";
import {
  Commit,
  checkCommit,
  commitHash,
  commitPreimage,
  gridCanonical,
  gridHash,
  specCanonical,
} from "../src/wire.js";

const vectors = JSON.parse(
  readFileSync(new URL("../../fixtures/hash/vectors.json", import.meta.url), "utf-8"),
);

describe("sha256Hex", () => {
  it("matches known digests", () => {
    const enc = new TextEncoder();
    expect(sha256Hex(enc.encode(""))).toBe(
      "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855",
    );
    expect(sha256Hex(enc.encode("abc"))).toBe(
      "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad",
    );
    // multi-block input (> 64 bytes)
    expect(sha256Hex(enc.encode("x".repeat(200)))).toBe(
      "aa20c23e3201834050679e1d88941b9a6fed0557c9a705cb2c315e2e63fd486d",
    );
  });
});

describe("grid hashing", () => {
  it("reproduces every pinned canonical form and hash", () => {
    for (const g of vectors.grids) {
      expect(gridCanonical(g.grid)).toBe(g.canonical);
      expect(gridHash(g.grid)).toBe(g.grid_hash);
    }
  });
});

describe("commit hashing", () => {
  it("rebuilds each pinned preimage and commit hash", () => {
    for (const rec of vectors.commits) {
      const c = rec.commit as Commit;
      const preimage = commitPreimage(
        c.parent_hash, c.version, c.author, c.source, c.timestamp_ms, c.grid,
      );
      expect(preimage).toBe(rec.preimage);
      expect(
        commitHash(c.parent_hash, c.version, c.author, c.source, c.timestamp_ms, c.grid),
      ).toBe(c.commit_hash);
      expect(checkCommit(c, null)).toBeNull();
    }
  });

  it("verifies the pinned chain links", () => {
    const commits = vectors.commits.map((r: { commit: Commit }) => r.commit);
    for (let i = 1; i < commits.length; i++) {
      expect(commits[i].parent_hash).toBe(commits[i - 1].commit_hash);
      expect(checkCommit(commits[i], commits[i - 1])).toBeNull();
    }
  });

  it("reports tampering as a chain fault", () => {
    const c = { ...vectors.commits[0].commit } as Commit;
    c.grid = c.grid.map((cell) => ({ ...cell }));
    c.grid[0] = { ...c.grid[0], type_id: c.grid[0].type_id + 1 };
    expect(checkCommit(c, null)).toMatch(/grid_hash/);

    const c2 = { ...vectors.commits[0].commit, parent_hash: "ab".repeat(32) } as Commit;
    expect(checkCommit(c2, null)).toMatch(/version 1 parent_hash/);
  });
});

describe("spec encoding", () => {
  it("reproduces the pinned spec canonical form", () => {
    expect(specCanonical(vectors.spec)).toBe(vectors.spec_canonical);
  });
});
