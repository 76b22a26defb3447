/** Mask sampling that reproduces server-side draws bit for bit.
 *
 * Independent dropout masks keep each coordinate with probability 1 - p_j.
 * Orthogonal masks chain conditional draws through a "still unclaimed"
 * accumulator, making the k masks pairwise disjoint while each stays
 * marginally Bernoulli(1 - p_j).
 */

import { ConstraintViolation, DimensionMismatch, InvalidRates } from "./errors.js";
import { deriveStream, type StreamKey } from "./rng.js";

/** Computed keep probabilities within this distance outside [0, 1] are clamped. */
export const Q_TOL = 1e-9;
const CONSTRAINT_TOL = 1e-9;

export type MaskStrategy = "dropout" | "orthogonal";

export interface MaskSet {
  /** k rows of dim 0/1 entries; orthogonal rows are pairwise disjoint. */
  masks: Uint8Array[];
  /** The unchained Bernoulli draws behind the masks. */
  rawDraws: Uint8Array[];
  keepProbs: number[];
  dropoutRates: number[];
}

/** Correctly rounded sum of finite doubles (Shewchuk partials).
 *
 * The capacity check and the conditional keep probabilities are defined in
 * terms of exactly rounded sums, so a plain left-to-right accumulation could
 * disagree with the server by one ulp.
 */
export function fsum(values: Iterable<number>): number {
  const partials: number[] = [];
  for (let x of values) {
    if (!Number.isFinite(x)) {
      throw new RangeError(`non-finite value in sum: ${x}`);
    }
    let i = 0;
    for (let j = 0; j < partials.length; j++) {
      let y = partials[j];
      if (Math.abs(x) < Math.abs(y)) {
        const t = x;
        x = y;
        y = t;
      }
      const hi = x + y;
      const lo = y - (hi - x);
      if (lo !== 0) {
        partials[i++] = lo;
      }
      x = hi;
    }
    partials.length = i;
    if (x !== 0) {
      partials.push(x);
    }
  }
  let hi = 0;
  let n = partials.length;
  if (n > 0) {
    hi = partials[--n];
    let lo = 0;
    while (n > 0) {
      const x = hi;
      const y = partials[--n];
      hi = x + y;
      lo = y - (hi - x);
      if (lo !== 0) {
        break;
      }
    }
    // make round-half-even work across the remaining partials
    if (n > 0 && ((lo < 0 && partials[n - 1] < 0) || (lo > 0 && partials[n - 1] > 0))) {
      const y = lo * 2;
      const x = hi + y;
      if (y === x - hi) {
        hi = x;
      }
    }
  }
  return hi;
}

export function checkRates(rates: readonly number[]): void {
  for (let j = 0; j < rates.length; j++) {
    const p = rates[j];
    if (typeof p !== "number" || !Number.isFinite(p) || p < 0 || p > 1) {
      throw new InvalidRates(`dropout rate p_${j + 1} = ${p} outside [0, 1]`);
    }
  }
}

export function checkOrthogonalCapacity(rates: readonly number[]): void {
  checkRates(rates);
  const total = fsum(rates.map((p) => 1 - p));
  if (total > 1 + CONSTRAINT_TOL) {
    throw new ConstraintViolation(
      `sum(1-p) = ${total} exceeds the orthogonal merge capacity of 1`,
    );
  }
}

/** Conditional Bernoulli parameter q_j of the chained draw for adapter j (1-based).
 *
 * q_1 = 1 - p_1 and, for j >= 2, q_j = (1 - p_j) / D_j with D_j one minus
 * the keep rates already allocated.  D_j = 0 only when capacity is fully
 * consumed, where the continuous limit q_j = 0 is returned.
 */
export function keepProbability(j: number, rates: readonly number[]): number {
  if (!Number.isInteger(j) || j < 1 || j > rates.length) {
    throw new RangeError(`j = ${j} out of range 1..${rates.length}`);
  }
  checkRates(rates);
  if (j === 1) {
    return 1 - rates[0];
  }
  const denom = fsum(rates.slice(0, j - 1)) - (j - 2);
  if (Math.abs(denom) <= Q_TOL) {
    return 0;
  }
  const q = (1 - rates[j - 1]) / denom;
  if (q < -Q_TOL || q > 1 + Q_TOL) {
    throw new InvalidRates(
      `keep probability q_${j} = ${q} outside [0, 1]; ` +
        "rates violate the orthogonal capacity constraint",
    );
  }
  return Math.min(Math.max(q, 0), 1);
}

export function keepProbabilities(rates: readonly number[]): number[] {
  return rates.map((_, idx) => keepProbability(idx + 1, rates));
}

function checkSamplingArgs(k: number, dim: number, keys: readonly StreamKey[]): void {
  if (!Number.isInteger(dim) || dim < 1) {
    throw new DimensionMismatch(`dim must be positive, got ${dim}`);
  }
  if (keys.length !== k) {
    throw new DimensionMismatch(
      `need one stream key per rate: got ${keys.length} keys for ${k} rates`,
    );
  }
}

function bernoulliRow(key: StreamKey, q: number, dim: number): Uint8Array {
  const stream = deriveStream(key);
  const row = new Uint8Array(dim);
  for (let i = 0; i < dim; i++) {
    row[i] = stream.nextDouble() < q ? 1 : 0;
  }
  return row;
}

/** Independent dropout masks: m^(j) = z^(j) with z_i ~ Bernoulli(1 - p_j). */
export function sampleMcMasks(
  rates: readonly number[],
  dim: number,
  keys: readonly StreamKey[],
): MaskSet {
  checkRates(rates);
  checkSamplingArgs(rates.length, dim, keys);
  const keep = rates.map((p) => 1 - p);
  const rows = keep.map((q, j) => bernoulliRow(keys[j], q, dim));
  return { masks: rows, rawDraws: rows, keepProbs: keep, dropoutRates: [...rates] };
}

/** Accumulator loop over raw draws: m^(j) = acc & z^(j), acc &= 1 - z^(j). */
export function chainDraws(draws: readonly Uint8Array[]): Uint8Array[] {
  const dim = draws.length > 0 ? draws[0].length : 0;
  const acc = new Uint8Array(dim).fill(1);
  return draws.map((zj) => {
    const mj = new Uint8Array(dim);
    for (let i = 0; i < dim; i++) {
      mj[i] = acc[i] & zj[i];
      acc[i] &= 1 - zj[i];
    }
    return mj;
  });
}

/** Chained disjoint masks; rejects capacity violations before sampling. */
export function sampleOrthogonalMasks(
  rates: readonly number[],
  dim: number,
  keys: readonly StreamKey[],
): MaskSet {
  checkOrthogonalCapacity(rates);
  checkSamplingArgs(rates.length, dim, keys);
  const qs = keepProbabilities(rates);
  const raw = qs.map((q, j) => bernoulliRow(keys[j], q, dim));
  return { masks: chainDraws(raw), rawDraws: raw, keepProbs: qs, dropoutRates: [...rates] };
}

/** One key per adapter index, the layout the CLI and service use. */
export function defaultStreamKeys(
  k: number,
  seed: number | bigint,
  layerIndex: number | bigint = 0,
  sampleIndex: number | bigint = 0,
): StreamKey[] {
  return Array.from({ length: k }, (_, j) => ({
    seed,
    layerIndex,
    sampleIndex,
    adapterIndex: j,
  }));
}

/** One mask set at the default key layout; equals row-for-row what the
 * service returns from /sample-masks with samples = 1. */
export function sampleMasks(
  rates: readonly number[],
  dim: number,
  strategy: MaskStrategy = "orthogonal",
  seed: number | bigint = 0,
): Uint8Array[] {
  return sampleMaskRows(rates, dim, 1, strategy, seed);
}

/** Mask rows for several sample indices, concatenated sample-major, matching
 * the layout of multi-sample dumps. */
export function sampleMaskRows(
  rates: readonly number[],
  dim: number,
  samples: number,
  strategy: MaskStrategy,
  seed: number | bigint,
): Uint8Array[] {
  if (strategy !== "dropout" && strategy !== "orthogonal") {
    throw new RangeError(
      `strategy must be 'dropout' or 'orthogonal' for mask sampling, got ${strategy}`,
    );
  }
  if (!Number.isInteger(samples) || samples < 1) {
    throw new DimensionMismatch(`samples must be positive, got ${samples}`);
  }
  const rows: Uint8Array[] = [];
  for (let s = 0; s < samples; s++) {
    const keys = defaultStreamKeys(rates.length, seed, 0, s);
    const set =
      strategy === "orthogonal"
        ? sampleOrthogonalMasks(rates, dim, keys)
        : sampleMcMasks(rates, dim, keys);
    rows.push(...set.masks);
  }
  return rows;
}
