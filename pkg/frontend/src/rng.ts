/** Deterministic random streams: splitmix64 key mixing feeding xoshiro256++.
 *
 * This mirrors the generator the merge service pins, bit for bit, so masks
 * sampled here equal the rows in CLI dumps and merge audit documents for the
 * same (seed, layer, sample, adapter) key:
 *
 * - the four key fields fold into a 64-bit state via the splitmix64
 *   finalizer, `state = mix(state + field)`, in field order, starting at 0;
 * - four further splitmix64 steps expand the state into the 256-bit
 *   xoshiro256++ state;
 * - a uniform double takes the top 53 bits of each output over 2^53, and a
 *   Bernoulli(q) draw is 1 iff that uniform is < q.
 */

const MASK64 = (1n << 64n) - 1n;
const GOLDEN = 0x9e3779b97f4a7c15n;
const MIX_MUL1 = 0xbf58476d1ce4e5b9n;
const MIX_MUL2 = 0x94d049bb133111ebn;
const INV_2_53 = 2 ** -53;

export function splitmix64Mix(z: bigint): bigint {
  z &= MASK64;
  z = ((z ^ (z >> 30n)) * MIX_MUL1) & MASK64;
  z = ((z ^ (z >> 27n)) * MIX_MUL2) & MASK64;
  return z ^ (z >> 31n);
}

export interface StreamKey {
  seed: number | bigint;
  layerIndex?: number | bigint;
  sampleIndex?: number | bigint;
  adapterIndex?: number | bigint;
}

function toU64(value: number | bigint, field: string): bigint {
  if (typeof value === "number" && !Number.isSafeInteger(value)) {
    throw new RangeError(`${field} must be an integer, got ${value}`);
  }
  const v = BigInt(value);
  if (v < 0n || v > MASK64) {
    throw new RangeError(`${field} must be an unsigned 64-bit integer, got ${value}`);
  }
  return v;
}

/** Chained splitmix64 mix of the four key fields, in field order. */
export function deriveState(key: StreamKey): bigint {
  let state = 0n;
  state = splitmix64Mix((state + toU64(key.seed, "seed")) & MASK64);
  state = splitmix64Mix((state + toU64(key.layerIndex ?? 0, "layerIndex")) & MASK64);
  state = splitmix64Mix((state + toU64(key.sampleIndex ?? 0, "sampleIndex")) & MASK64);
  state = splitmix64Mix((state + toU64(key.adapterIndex ?? 0, "adapterIndex")) & MASK64);
  return state;
}

/** Scalar xoshiro256++ stream over BigInt; single-consumer. */
export class Stream {
  private s0: bigint;
  private s1: bigint;
  private s2: bigint;
  private s3: bigint;

  constructor(state: bigint) {
    // splitmix64 expansion of the 64-bit state into the 256-bit xoshiro state
    let z = state & MASK64;
    z = (z + GOLDEN) & MASK64;
    this.s0 = splitmix64Mix(z);
    z = (z + GOLDEN) & MASK64;
    this.s1 = splitmix64Mix(z);
    z = (z + GOLDEN) & MASK64;
    this.s2 = splitmix64Mix(z);
    z = (z + GOLDEN) & MASK64;
    this.s3 = splitmix64Mix(z);
  }

  nextUint64(): bigint {
    const tmp = (this.s0 + this.s3) & MASK64;
    const result = ((((tmp << 23n) | (tmp >> 41n)) & MASK64) + this.s0) & MASK64;
    const t = (this.s1 << 17n) & MASK64;
    this.s2 ^= this.s0;
    this.s3 ^= this.s1;
    this.s1 ^= this.s2;
    this.s0 ^= this.s3;
    this.s2 ^= t;
    this.s3 = ((this.s3 << 45n) | (this.s3 >> 19n)) & MASK64;
    return result;
  }

  nextDouble(): number {
    return Number(this.nextUint64() >> 11n) * INV_2_53;
  }

  bernoulli(q: number): 0 | 1 {
    return this.nextDouble() < q ? 1 : 0;
  }
}

export function deriveStream(key: StreamKey): Stream {
  return new Stream(deriveState(key));
}
