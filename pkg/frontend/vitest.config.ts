import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    globalSetup: ["./setup/service.ts"],
    // equivalence tests shell out to the CLI many times
    testTimeout: 180_000,
    hookTimeout: 60_000,
    fileParallelism: false,
  },
});
