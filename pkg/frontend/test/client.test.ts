import { Buffer } from "node:buffer";
import { readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { beforeAll, describe, expect, it } from "vitest";

import {
  BadMagic,
  ClosedHandle,
  ConstraintViolation,
  DimensionMismatch,
  EmptyPlan,
  RaggedRows,
  RemoteError,
} from "../src/errors.js";
import { AdapterHandle } from "../src/handle.js";
import { sampleMasks } from "../src/masks.js";
import { savePack, type AdapterSpec } from "../src/pack.js";
import { VERSION } from "../src/index.js";
import type { OrthmergeClient } from "../src/client.js";
import {
  bytesEqual,
  client,
  fixtureStream,
  randomAdapters,
  runCli,
  tempDir,
} from "./helpers.js";

let svc: OrthmergeClient;

beforeAll(() => {
  svc = client();
});

function singleAdapter(): AdapterSpec[] {
  return [
    {
      name: "solo",
      dIn: 2,
      dOut: 2,
      rank: 1,
      factorA: Float32Array.from([1, 0.5]),
      factorB: Float32Array.from([2, -1]),
      scale: 1.25,
    },
  ];
}

describe("health", () => {
  it("reports ok with the version this package mirrors", async () => {
    const doc = await svc.health();
    expect(doc.status).toBe("ok");
    expect(doc.version).toBe(VERSION);
  });
});

describe("sample masks", () => {
  it("returns dumps matching local sampling row for row", async () => {
    const dump = await svc.boundSampleMasks([0.5, 0.5], 32, "orthogonal", 9);
    expect(dump.keepProbs).toEqual([0.5, 1.0]);
    expect(dump.rates).toEqual([0.5, 0.5]);
    expect(dump.seed).toBe(9);
    const local = sampleMasks([0.5, 0.5], 32, "orthogonal", 9);
    expect(dump.masks.map((r) => [...r])).toEqual(local.map((r) => [...r]));
  });

  it("returns bytes identical to the CLI dump artifact", async () => {
    const dir = tempDir();
    const res = runCli([
      "sample-masks",
      "--rates=0.4,0.6",
      "--dim=24",
      "--samples=2",
      "--strategy=dropout",
      "--seed=13",
      "--out",
      join(dir, "dump.json"),
    ]);
    expect(res.status, res.stderr).toBe(0);
    const raw = await svc.sampleMasksRaw({
      rates: [0.4, 0.6],
      dim: 24,
      samples: 2,
      strategy: "dropout",
      seed: 13,
    });
    expect(bytesEqual(raw, readFileSync(join(dir, "dump.json")))).toBe(true);
  });

  it("surfaces capacity violations as ConstraintViolation", async () => {
    await expect(svc.boundSampleMasks([0.1, 0.1], 8)).rejects.toThrow(ConstraintViolation);
    await expect(svc.boundSampleMasks([0.1, 0.1], 8)).rejects.toThrow(/sum\(1-p\)/);
  });

  it("surfaces unknown strategies as a remote ValueError", async () => {
    await expect(
      svc.sampleMasksRaw({ rates: [0.5], dim: 4, strategy: "direct" as never }),
    ).rejects.toSatisfy((e: unknown) => e instanceof RemoteError && e.remoteName === "ValueError");
  });

  it("surfaces schema violations as a remote 422", async () => {
    await expect(
      svc.sampleMasksRaw({ dim: 4 } as never),
    ).rejects.toSatisfy((e: unknown) => e instanceof RemoteError && e.remoteName === "HTTP 422");
  });
});

describe("merge", () => {
  it("degenerates to the direct merge at zero rates", async () => {
    const handle = AdapterHandle.fromAdapters(singleAdapter());
    const h = [0.3, -0.7];
    const direct = await svc.boundMerge(handle, h, { strategy: "direct" });
    const dropout = await svc.boundMerge(handle, h, { strategy: "dropout", rates: [0.0] });
    const orthogonal = await svc.boundMerge(handle, h, {
      strategy: "orthogonal",
      rates: [0.0],
    });
    expect([...dropout.output]).toEqual([...direct.output]);
    expect([...orthogonal.output]).toEqual([...direct.output]);
    expect(direct.masks).toBeNull();
    expect(orthogonal.masks?.map((r) => [...r])).toEqual([[1, 1]]);
  });

  it("applies base weights when provided", async () => {
    const handle = AdapterHandle.fromAdapters(singleAdapter());
    const base = [
      [1, 0],
      [0, 1],
    ];
    const h = [2, 3];
    const withBase = await svc.boundMerge(handle, h, { base });
    expect([...withBase.basePart]).toEqual([2, 3]);
    const without = await svc.boundMerge(handle, h, {});
    expect([...without.basePart]).toEqual([0, 0]);
    expect(withBase.output[0]).toBe(without.output[0] + 2);
    expect(withBase.output[1]).toBe(without.output[1] + 3);
  });

  it("rejects closed handles before any request", async () => {
    const handle = AdapterHandle.fromAdapters(singleAdapter());
    handle.close();
    expect(handle.closed).toBe(true);
    await expect(svc.boundMerge(handle, [1, 2])).rejects.toThrow(ClosedHandle);
  });

  it("rejects invalid orthogonal rates as ConstraintViolation", async () => {
    const stream = fixtureStream(55);
    const handle = AdapterHandle.fromAdapters(randomAdapters(stream, 2, 3, 3, 2));
    await expect(
      svc.boundMerge(handle, [1, 0, 0], { strategy: "orthogonal", rates: [0.2, 0.2] }),
    ).rejects.toThrow(ConstraintViolation);
  });

  it("rejects rate/weight count mismatches as DimensionMismatch", async () => {
    const handle = AdapterHandle.fromAdapters(singleAdapter());
    await expect(
      svc.boundMerge(handle, [1, 2], { rates: [0.1, 0.2] }),
    ).rejects.toThrow(DimensionMismatch);
  });

  it("rejects corrupt packs server-side with the pack taxonomy", async () => {
    const bytes = savePack(singleAdapter());
    bytes[0] = 0x58;
    await expect(
      svc.mergeRaw({
        pack_b64: Buffer.from(bytes).toString("base64"),
        input: [1, 2],
      }),
    ).rejects.toThrow(BadMagic);
  });
});

describe("verify and analyze", () => {
  it("passes the chained-mask suites and fails the independent-mask control", async () => {
    const pass = await svc.verify({ rates: [0.5, 0.5], dim: 64, samples: 400, seed: 5 });
    expect(pass.passed).toBe(true);
    const control = await svc.verify({
      rates: [0.5, 0.5],
      dim: 10_000,
      samples: 60,
      seed: 5,
      suite: "orthogonality",
      force_mc: true,
    });
    expect(control.passed).toBe(false);
  });

  it("rejects ragged analysis inputs as RaggedRows", async () => {
    const handle = AdapterHandle.fromAdapters(singleAdapter());
    await expect(
      svc.analyzeRaw({
        pack_b64: Buffer.from(handle.packBytes()).toString("base64"),
        inputs: [[1, 2], [3]],
      }),
    ).rejects.toThrow(RaggedRows);
  });
});

describe("adapter handles", () => {
  it("exposes read-only dims and copies buffers at the boundary", () => {
    const stream = fixtureStream(70);
    const adapters = randomAdapters(stream, 3, 4, 6, 2);
    const handle = AdapterHandle.fromAdapters(adapters);
    expect(handle.count).toBe(3);
    expect(handle.dIn).toBe(4);
    expect(handle.dOut).toBe(6);
    expect(handle.ranks).toEqual(adapters.map((a) => a.rank));
    expect(handle.names).toEqual(["ad00", "ad01", "ad02"]);

    const copies = handle.adapters();
    copies[0].factorA[0] = 999;
    expect(handle.adapters()[0].factorA[0]).not.toBe(999);

    const bytes = handle.packBytes();
    bytes[20] ^= 0xff;
    expect(bytesEqual(handle.packBytes(), savePack(adapters))).toBe(true);
  });

  it("loads packs from disk byte-compatibly", () => {
    const dir = tempDir();
    const stream = fixtureStream(71);
    const adapters = randomAdapters(stream, 2, 3, 3, 2);
    const path = join(dir, "pack.lrpk");
    writeFileSync(path, savePack(adapters));
    const handle = AdapterHandle.fromPackBytes(readFileSync(path));
    expect(bytesEqual(handle.packBytes(), savePack(adapters))).toBe(true);
  });

  it("rejects empty sets and mixed dims", () => {
    expect(() => AdapterHandle.fromAdapters([])).toThrow(EmptyPlan);
    const stream = fixtureStream(72);
    const mixed = [
      ...randomAdapters(stream, 1, 3, 3, 2),
      { ...randomAdapters(stream, 1, 5, 3, 2)[0], name: "other" },
    ];
    const handle = AdapterHandle.fromAdapters(mixed);
    expect(() => handle.dIn).toThrow(DimensionMismatch);
    expect(handle.dOut).toBe(3);
  });

  it("refuses every accessor after close", () => {
    const handle = AdapterHandle.fromAdapters(singleAdapter());
    handle.close();
    expect(() => handle.count).toThrow(ClosedHandle);
    expect(() => handle.packBytes()).toThrow(ClosedHandle);
    expect(() => handle.adapters()).toThrow(ClosedHandle);
  });
});
