import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { viewModel } from "../src/render.js";
import { Session } from "../src/session.js";
import { gridHash } from "../src/wire.js";
import { TestServer, newDataDir, runCli, startServer, until } from "./server.js";

const exportPath = fileURLToPath(new URL("../../fixtures/scrub/table.export", import.meta.url));
const versions = JSON.parse(
  readFileSync(new URL("../../fixtures/scrub/versions.json", import.meta.url), "utf-8"),
) as { table: string; versions: { version: number; grid_hash: string; commit_hash: string }[] };

describe("history scrubbing against a live server", () => {
  let server: TestServer;
  let api: ApiClient;

  beforeAll(async () => {
    const dir = newDataDir();
    runCli(["import", "--data-dir", dir, exportPath]);
    server = await startServer(dir);
    api = new ApiClient(server.baseUrl);
  });

  afterAll(async () => {
    await server?.stop();
  });

  it("renders all 30 versions exactly as the history API reports them", async () => {
    const session = new Session({ server: server.baseUrl, table: "scrub", author: "alice" });
    await session.start();
    try {
      expect(session.replica.version).toBe(30);
      expect(versions.versions.length).toBe(30);

      for (const rec of versions.versions) {
        await session.scrub(rec.version);
        expect(session.viewVersion()).toBe(rec.version);

        const commit = await api.getCommit("scrub", rec.version);
        expect(commit.commit_hash).toBe(rec.commit_hash);

        // cell for cell against the API, and against the pinned hash
        const view = session.viewGrid();
        expect(view.length).toBe(commit.grid.length);
        for (let i = 0; i < view.length; i++) {
          expect(view[i]).toEqual(commit.grid[i]);
        }
        expect(gridHash(view)).toBe(rec.grid_hash);

        // the renderer sees identical cells, so fills are identical
        const mine = viewModel(session.spec, view);
        const theirs = viewModel(session.spec, commit.grid);
        expect(mine).toEqual(theirs);
      }

      // scrubbing at head shows the live grid
      await session.scrub(30);
      expect(gridHash(session.viewGrid())).toBe(session.replica.stateHash());
    } finally {
      session.close();
    }
  });

  it("resumes the stream without a seq gap after scrubbing", async () => {
    const session = new Session({ server: server.baseUrl, table: "scrub", author: "alice" });
    await session.start();
    try {
      const headBefore = session.replica.version;
      await session.scrub(5);
      expect(session.viewVersion()).toBe(5);

      // someone commits while this session is looking at history
      const head = await api.getHead("scrub");
      const freeType = head.grid[0].type_id === 1 ? 2 : 1;
      await api.postEdits("scrub", "outside", "cli", head.version, [
        { index: 0, cell: { type_id: freeType, rotation: 0 } },
      ]);

      // still scrubbed: view pinned, replica untouched, nothing sent
      expect(session.viewVersion()).toBe(5);
      expect(session.replica.version).toBe(headBefore);

      session.backToLive();
      await until(
        () => session.replica.version === head.version + 1,
        "replica catches up with the missed commit",
      );
      const d = session.debug();
      expect(d.seq_gaps).toBe(0);
      expect(d.chain_ok).toBe(true);
      const newHead = await api.getHead("scrub");
      expect(d.state_hash).toBe(newHead.grid_hash);
    } finally {
      session.close();
    }
  });
});
