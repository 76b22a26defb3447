/** HTTP client for the merge service.
 *
 * Raw methods return the exact response bytes; the service emits the same
 * canonical JSON the CLI writes to files, so callers can compare or store
 * artifacts byte for byte.  Typed wrappers parse those bytes into buffers.
 */

import { Buffer } from "node:buffer";

import { errorFromPayload, OrthmergeError } from "./errors.js";
import type { AdapterHandle } from "./handle.js";

export type MergeStrategy = "direct" | "dropout" | "orthogonal";

export interface SampleMasksRequest {
  rates: number[];
  dim: number;
  samples?: number;
  strategy?: "dropout" | "orthogonal";
  seed?: number;
}

export interface MergeRequest {
  pack_b64: string;
  input: number[];
  base?: number[][] | null;
  strategy?: MergeStrategy;
  rates?: number[] | null;
  weights?: number[] | null;
  seed?: number;
}

export interface VerifyRequest {
  rates: number[];
  dim: number;
  samples?: number;
  seed?: number;
  suite?: "all" | "consistency" | "orthogonality" | "unbiasedness";
  force_mc?: boolean;
}

export interface AnalyzeRequest {
  pack_b64: string;
  inputs: number[][];
  rates?: number[] | null;
  weights?: number[] | null;
  seed?: number;
}

export interface MergeOptions {
  strategy?: MergeStrategy;
  rates?: number[] | null;
  weights?: number[] | null;
  base?: number[][] | null;
  seed?: number;
}

/** Parsed merge audit; `raw` holds the byte-exact audit document. */
export interface MergeAudit {
  output: Float64Array;
  basePart: Float64Array;
  contributions: Float64Array[];
  masks: Uint8Array[] | null;
  strategy: MergeStrategy;
  rates: number[];
  weights: number[];
  seed: number;
  raw: Uint8Array;
}

export interface MaskDump {
  masks: Uint8Array[];
  keepProbs: number[];
  rates: number[];
  seed: number;
  raw: Uint8Array;
}

const decoder = new TextDecoder();

export class OrthmergeClient {
  readonly baseUrl: string;

  constructor(baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
  }

  private async request(path: string, body?: unknown): Promise<Uint8Array> {
    const res = await fetch(this.baseUrl + path, {
      method: body === undefined ? "GET" : "POST",
      headers: body === undefined ? undefined : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const bytes = new Uint8Array(await res.arrayBuffer());
    if (!res.ok) {
      let name = `HTTP ${res.status}`;
      let message = decoder.decode(bytes);
      try {
        const payload = JSON.parse(message);
        if (payload && typeof payload.error === "string") {
          name = payload.error;
          message = String(payload.message ?? "");
        }
      } catch {
        // non-JSON error body; keep the raw text
      }
      throw errorFromPayload(name, message);
    }
    return bytes;
  }

  async health(): Promise<{ status: string; version: string }> {
    return JSON.parse(decoder.decode(await this.request("/health")));
  }

  async sampleMasksRaw(req: SampleMasksRequest): Promise<Uint8Array> {
    return this.request("/sample-masks", req);
  }

  async mergeRaw(req: MergeRequest): Promise<Uint8Array> {
    return this.request("/merge", req);
  }

  async verifyRaw(req: VerifyRequest): Promise<Uint8Array> {
    return this.request("/verify", req);
  }

  async analyzeRaw(req: AnalyzeRequest): Promise<Uint8Array> {
    return this.request("/analyze", req);
  }

  /** Sample one or more mask sets server-side and parse the dump. */
  async boundSampleMasks(
    rates: number[],
    dim: number,
    strategy: "dropout" | "orthogonal" = "orthogonal",
    seed = 0,
    samples = 1,
  ): Promise<MaskDump> {
    const raw = await this.sampleMasksRaw({ rates, dim, samples, strategy, seed });
    const doc = JSON.parse(decoder.decode(raw));
    return {
      masks: (doc.masks as number[][]).map((row) => Uint8Array.from(row)),
      keepProbs: doc.keep_probs as number[],
      rates: doc.rates as number[],
      seed: doc.seed as number,
      raw,
    };
  }

  /** Merge through the service; the returned audit is byte-identical to the
   * CLI's audit artifact for the same pack, input, and seed. */
  async boundMerge(
    handle: AdapterHandle,
    input: readonly number[],
    options: MergeOptions = {},
  ): Promise<MergeAudit> {
    const req: MergeRequest = {
      pack_b64: Buffer.from(handle.packBytes()).toString("base64"),
      input: [...input],
      strategy: options.strategy ?? "direct",
      seed: options.seed ?? 0,
    };
    if (options.base != null) {
      req.base = options.base;
    }
    if (options.rates != null) {
      req.rates = options.rates;
    }
    if (options.weights != null) {
      req.weights = options.weights;
    }
    const raw = await this.mergeRaw(req);
    const doc = JSON.parse(decoder.decode(raw));
    return {
      output: Float64Array.from(doc.output as number[]),
      basePart: Float64Array.from(doc.base_part as number[]),
      contributions: (doc.contributions as number[][]).map((row) => Float64Array.from(row)),
      masks:
        doc.masks === null
          ? null
          : (doc.masks as number[][]).map((row) => Uint8Array.from(row)),
      strategy: doc.strategy as MergeStrategy,
      rates: doc.rates as number[],
      weights: doc.weights as number[],
      seed: doc.seed as number,
      raw,
    };
  }

  /** Run server-side certification suites; resolves with parsed pass state. */
  async verify(req: VerifyRequest): Promise<{ passed: boolean; raw: Uint8Array }> {
    const raw = await this.verifyRaw(req);
    const doc = JSON.parse(decoder.decode(raw));
    if (typeof doc.passed !== "boolean") {
      throw new OrthmergeError("verify response is missing the 'passed' flag");
    }
    return { passed: doc.passed, raw };
  }
}
