import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "node",
    include: ["test/**/*.test.ts"],
    // the convergence and scrub suites spawn a real server
    testTimeout: 30000,
    hookTimeout: 30000,
  },
});
