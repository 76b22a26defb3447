import { spawnSync } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { OrthmergeClient } from "../src/client.js";
import { deriveStream, type Stream } from "../src/rng.js";
import type { AdapterSpec } from "../src/pack.js";

export function serviceUrl(): string {
  const port = process.env.ORTHMERGE_TEST_PORT;
  if (!port) {
    throw new Error("ORTHMERGE_TEST_PORT is unset; the service global setup did not run");
  }
  return `http://127.0.0.1:${port}`;
}

export function client(): OrthmergeClient {
  return new OrthmergeClient(serviceUrl());
}

export interface CliResult {
  status: number;
  stdout: string;
  stderr: string;
}

/** Run the CLI; deterministic outputs do not depend on the JIT, so it is
 * disabled for faster startup. */
export function runCli(args: string[], cwd?: string): CliResult {
  const res = spawnSync("python3", ["-m", "orthmerge", ...args], {
    encoding: "utf-8",
    cwd,
    env: { ...process.env, ORTHMERGE_NO_JIT: "1" },
    maxBuffer: 64 * 1024 * 1024,
  });
  if (res.error) {
    throw res.error;
  }
  return { status: res.status ?? -1, stdout: res.stdout, stderr: res.stderr };
}

export function tempDir(): string {
  return mkdtempSync(join(tmpdir(), "orthmerge-ts-"));
}

/** Deterministic test randomness, keyed away from the mask sample space. */
export function fixtureStream(seed: number): Stream {
  return deriveStream({ seed, layerIndex: 0x7e57, sampleIndex: 0, adapterIndex: 0 });
}

const SCALES = [1.0, 0.5, 2.0, 1.25, 0.75];

export function randomAdapters(
  stream: Stream,
  k: number,
  dIn: number,
  dOut: number,
  maxRank: number,
): AdapterSpec[] {
  const adapters: AdapterSpec[] = [];
  for (let i = 0; i < k; i++) {
    const rank = 1 + Math.floor(stream.nextDouble() * Math.min(maxRank, dIn, dOut));
    const factorA = new Float32Array(rank * dIn);
    const factorB = new Float32Array(dOut * rank);
    for (let t = 0; t < factorA.length; t++) {
      factorA[t] = Math.fround(2 * stream.nextDouble() - 1);
    }
    for (let t = 0; t < factorB.length; t++) {
      factorB[t] = Math.fround(2 * stream.nextDouble() - 1);
    }
    adapters.push({
      name: `ad${String(i).padStart(2, "0")}`,
      dIn,
      dOut,
      rank,
      factorA,
      factorB,
      scale: SCALES[Math.floor(stream.nextDouble() * SCALES.length)],
    });
  }
  return adapters;
}

export function randomVector(stream: Stream, dim: number): number[] {
  return Array.from({ length: dim }, () => 2 * stream.nextDouble() - 1);
}

export function randomMatrix(stream: Stream, rows: number, cols: number): number[][] {
  return Array.from({ length: rows }, () => randomVector(stream, cols));
}

/** Rates whose keep masses sum below 1, so the orthogonal capacity holds. */
export function randomOrthogonalRates(stream: Stream, k: number): number[] {
  const raw = Array.from({ length: k }, () => stream.nextDouble() + 1e-3);
  const total = raw.reduce((a, b) => a + b, 0);
  const mass = 0.2 + 0.75 * stream.nextDouble();
  return raw.map((r) => 1 - (r / total) * mass);
}

export function randomDropoutRates(stream: Stream, k: number): number[] {
  return Array.from({ length: k }, () => 0.9 * stream.nextDouble());
}

export function bytesEqual(a: Uint8Array, b: Uint8Array): boolean {
  if (a.length !== b.length) {
    return false;
  }
  for (let i = 0; i < a.length; i++) {
    if (a[i] !== b[i]) {
      return false;
    }
  }
  return true;
}
