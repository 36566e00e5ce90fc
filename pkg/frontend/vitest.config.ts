import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    environment: "node",
    // The live-server round-trip trains a tiny model in its setup hook.
    hookTimeout: 180_000,
    testTimeout: 150_000,
  },
});
