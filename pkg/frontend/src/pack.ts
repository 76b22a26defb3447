/** Adapter container codec.
 *
 * Layout: 8 bytes magic "LRPK0001", a 64-bit little-endian header length, a
 * canonical JSON header (alphabetical keys, compact separators, ASCII-only
 * strings), then concatenated row-major little-endian float32 tensors, each
 * starting at an 8-byte-aligned payload offset.  Tensors appear in adapter
 * order, factor A before factor B.
 *
 * `savePack` emits the same bytes for the same adapters as the service-side
 * writer, and `loadPack` applies the same validation sequence with the same
 * error taxonomy, so packs move freely between the two.
 */

import {
  BadMagic,
  NonFiniteTensor,
  ParseError,
  ShapeMismatch,
  TruncatedFile,
} from "./errors.js";

export const MAGIC = "LRPK0001";
export const ALIGNMENT = 8;

const MAGIC_BYTES = new TextEncoder().encode(MAGIC);

export interface AdapterSpec {
  name: string;
  dIn: number;
  dOut: number;
  rank: number;
  /** (rank, dIn) row-major. */
  factorA: Float32Array;
  /** (dOut, rank) row-major. */
  factorB: Float32Array;
  scale: number;
}

/** Marks a number that must render as a float ("1.0", not "1") in canonical JSON. */
export class CanonicalFloat {
  readonly value: number;

  constructor(value: number) {
    this.value = value;
  }
}

/** Shortest round-trip decimal form of a float, matching the server's JSON
 * number rendering: integral values keep a ".0", scientific notation is used
 * only when the decimal exponent is below -4 or at least 16, and exponents
 * carry a sign and at least two digits. */
export function canonicalFloatText(x: number): string {
  if (!Number.isFinite(x)) {
    throw new RangeError(`non-finite number ${x} has no canonical JSON form`);
  }
  if (x === 0) {
    return Object.is(x, -0) ? "-0.0" : "0.0";
  }
  const sign = x < 0 ? "-" : "";
  const text = Math.abs(x).toString();

  // normalize the platform rendering to (digits, exponent of the leading digit)
  let digits: string;
  let exp: number;
  const eIdx = text.indexOf("e");
  if (eIdx >= 0) {
    const mantissa = text.slice(0, eIdx);
    exp = parseInt(text.slice(eIdx + 1), 10);
    digits = mantissa.replace(".", "");
  } else {
    const dot = text.indexOf(".");
    if (dot < 0) {
      digits = text;
      exp = text.length - 1;
    } else if (text.startsWith("0.")) {
      const frac = text.slice(2);
      let lead = 0;
      while (lead < frac.length && frac[lead] === "0") {
        lead++;
      }
      digits = frac.slice(lead);
      exp = -lead - 1;
    } else {
      digits = text.slice(0, dot) + text.slice(dot + 1);
      exp = dot - 1;
    }
  }
  digits = digits.replace(/0+$/, "") || "0";

  if (exp >= -4 && exp < 16) {
    if (exp >= digits.length - 1) {
      return sign + digits + "0".repeat(exp - (digits.length - 1)) + ".0";
    }
    if (exp >= 0) {
      return sign + digits.slice(0, exp + 1) + "." + digits.slice(exp + 1);
    }
    return sign + "0." + "0".repeat(-exp - 1) + digits;
  }
  const mant = digits.length > 1 ? digits[0] + "." + digits.slice(1) : digits;
  const expText = (exp < 0 ? "-" : "+") + String(Math.abs(exp)).padStart(2, "0");
  return sign + mant + "e" + expText;
}

const STRING_ESCAPES: Record<number, string> = {
  0x08: "\\b",
  0x09: "\\t",
  0x0a: "\\n",
  0x0c: "\\f",
  0x0d: "\\r",
  0x22: '\\"',
  0x5c: "\\\\",
};

function canonicalStringText(s: string): string {
  let out = '"';
  for (let i = 0; i < s.length; i++) {
    const unit = s.charCodeAt(i);
    const escape = STRING_ESCAPES[unit];
    if (escape !== undefined) {
      out += escape;
    } else if (unit >= 0x20 && unit <= 0x7e) {
      out += s[i];
    } else {
      out += "\\u" + unit.toString(16).padStart(4, "0");
    }
  }
  return out + '"';
}

function canonicalText(value: unknown): string {
  if (value === null) {
    return "null";
  }
  if (typeof value === "boolean") {
    return value ? "true" : "false";
  }
  if (typeof value === "number") {
    if (Number.isInteger(value) && Math.abs(value) < 2 ** 53 && !Object.is(value, -0)) {
      return String(value);
    }
    return canonicalFloatText(value);
  }
  if (value instanceof CanonicalFloat) {
    return canonicalFloatText(value.value);
  }
  if (typeof value === "string") {
    return canonicalStringText(value);
  }
  if (Array.isArray(value)) {
    return "[" + value.map(canonicalText).join(",") + "]";
  }
  if (typeof value === "object") {
    const entries = Object.entries(value as Record<string, unknown>)
      .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
      .map(([k, v]) => canonicalStringText(k) + ":" + canonicalText(v));
    return "{" + entries.join(",") + "}";
  }
  throw new RangeError(`value of type ${typeof value} has no canonical JSON form`);
}

/** Compact JSON with alphabetical keys, byte-compatible with server artifacts. */
export function canonicalJsonBytes(value: unknown): Uint8Array {
  return new TextEncoder().encode(canonicalText(value));
}

function align(n: number): number {
  return Math.ceil(n / ALIGNMENT) * ALIGNMENT;
}

function encodeF32(values: Float32Array): Uint8Array {
  const raw = new Uint8Array(values.length * 4);
  const view = new DataView(raw.buffer);
  for (let i = 0; i < values.length; i++) {
    view.setFloat32(i * 4, values[i], true);
  }
  return raw;
}

function checkSpec(a: AdapterSpec): void {
  for (const [field, value] of [
    ["dIn", a.dIn],
    ["dOut", a.dOut],
    ["rank", a.rank],
  ] as const) {
    if (!Number.isInteger(value) || value < 1) {
      throw new ShapeMismatch(`adapter ${a.name}: ${field} must be a positive integer`);
    }
  }
  if (a.factorA.length !== a.rank * a.dIn) {
    throw new ShapeMismatch(
      `adapter ${a.name}: factor A has ${a.factorA.length} values, expected rank*d_in = ${a.rank * a.dIn}`,
    );
  }
  if (a.factorB.length !== a.dOut * a.rank) {
    throw new ShapeMismatch(
      `adapter ${a.name}: factor B has ${a.factorB.length} values, expected d_out*rank = ${a.dOut * a.rank}`,
    );
  }
  if (!Number.isFinite(a.scale)) {
    throw new NonFiniteTensor(`adapter ${a.name}: scale is not finite`);
  }
  for (const [which, arr] of [["A", a.factorA], ["B", a.factorB]] as const) {
    for (let i = 0; i < arr.length; i++) {
      if (!Number.isFinite(arr[i])) {
        throw new NonFiniteTensor(`adapter ${a.name}: factor ${which} has NaN/Inf`);
      }
    }
  }
}

/** Canonical, deterministic serialization of a list of adapters. */
export function savePack(adapters: readonly AdapterSpec[]): Uint8Array {
  interface TensorMeta {
    dtype: string;
    name: string;
    nbytes: number;
    offset: number;
    shape: number[];
  }
  const tensors: TensorMeta[] = [];
  const chunks: Uint8Array[] = [];
  let offset = 0;
  for (const adapter of adapters) {
    checkSpec(adapter);
    const parts: Array<[string, Float32Array, number[]]> = [
      ["factor_a", adapter.factorA, [adapter.rank, adapter.dIn]],
      ["factor_b", adapter.factorB, [adapter.dOut, adapter.rank]],
    ];
    for (const [suffix, arr, shape] of parts) {
      const raw = encodeF32(arr);
      tensors.push({
        dtype: "f32",
        name: `${adapter.name}.${suffix}`,
        nbytes: raw.length,
        offset,
        shape,
      });
      chunks.push(raw);
      const end = offset + raw.length;
      const padded = align(end);
      if (padded > end) {
        chunks.push(new Uint8Array(padded - end));
      }
      offset = padded;
    }
  }
  const header = canonicalJsonBytes({
    adapters: adapters.map((a) => ({
      d_in: a.dIn,
      d_out: a.dOut,
      name: a.name,
      rank: a.rank,
      scale: new CanonicalFloat(a.scale),
    })),
    tensors,
  });
  const payloadLength = chunks.reduce((total, c) => total + c.length, 0);
  const out = new Uint8Array(16 + header.length + payloadLength);
  out.set(MAGIC_BYTES, 0);
  new DataView(out.buffer).setBigUint64(8, BigInt(header.length), true);
  out.set(header, 16);
  let cursor = 16 + header.length;
  for (const chunk of chunks) {
    out.set(chunk, cursor);
    cursor += chunk.length;
  }
  return out;
}

function isPlainInt(value: unknown): value is number {
  // JSON booleans must not pass for header integers
  return typeof value === "number" && Number.isInteger(value);
}

function requireKeys(
  obj: Record<string, unknown>,
  expected: readonly string[],
  what: string,
  strict: boolean,
): void {
  const missing = expected.filter((k) => !(k in obj));
  if (missing.length > 0) {
    throw new ParseError(`${what} missing keys ${JSON.stringify(missing.sort())}`);
  }
  if (strict) {
    const unknown = Object.keys(obj).filter((k) => !expected.includes(k));
    if (unknown.length > 0) {
      throw new ParseError(`${what} has unknown keys ${JSON.stringify(unknown.sort())}`);
    }
  }
}

const ADAPTER_KEYS = ["d_in", "d_out", "name", "rank", "scale"] as const;
const TENSOR_KEYS = ["dtype", "name", "nbytes", "offset", "shape"] as const;

interface TensorSpec {
  offset: number;
  nbytes: number;
  shape: [number, number];
}

/** Parse a container, validating every header claim against the actual byte
 * count before any tensor is read. */
export function loadPack(data: Uint8Array, strict = true): AdapterSpec[] {
  if (data.length < MAGIC_BYTES.length) {
    throw new TruncatedFile(`file has ${data.length} bytes, shorter than the magic`);
  }
  for (let i = 0; i < MAGIC_BYTES.length; i++) {
    if (data[i] !== MAGIC_BYTES[i]) {
      throw new BadMagic(`expected magic ${MAGIC}`);
    }
  }
  if (data.length < 16) {
    throw new TruncatedFile("file ends before the header length field");
  }
  const headerLen = new DataView(data.buffer, data.byteOffset, data.byteLength).getBigUint64(
    8,
    true,
  );
  if (16n + headerLen > BigInt(data.length)) {
    throw new TruncatedFile(
      `header claims ${headerLen} bytes but only ${data.length - 16} remain`,
    );
  }
  const headerEnd = 16 + Number(headerLen);
  let header: unknown;
  try {
    header = JSON.parse(new TextDecoder("utf-8", { fatal: true }).decode(data.subarray(16, headerEnd)));
  } catch (exc) {
    throw new ParseError(`header is not valid JSON: ${exc}`);
  }
  if (typeof header !== "object" || header === null || Array.isArray(header)) {
    throw new ParseError("header must be a JSON object");
  }
  const doc = header as Record<string, unknown>;
  requireKeys(doc, ["adapters", "tensors"], "header", strict);
  const meta = doc.adapters;
  const tensors = doc.tensors;
  if (!Array.isArray(meta) || !Array.isArray(tensors)) {
    throw new ParseError("header 'adapters' and 'tensors' must be arrays");
  }
  const payload = data.subarray(headerEnd);

  const specs: TensorSpec[] = [];
  let prevEnd = 0;
  for (let idx = 0; idx < tensors.length; idx++) {
    const t = tensors[idx];
    if (typeof t !== "object" || t === null || Array.isArray(t)) {
      throw new ParseError(`tensor ${idx} must be an object`);
    }
    const entry = t as Record<string, unknown>;
    requireKeys(entry, TENSOR_KEYS, `tensor ${idx}`, strict);
    if (entry.dtype !== "f32") {
      throw new ParseError(`tensor ${idx} has unsupported dtype ${JSON.stringify(entry.dtype)}`);
    }
    const shape = entry.shape;
    if (
      !Array.isArray(shape) ||
      shape.length !== 2 ||
      !shape.every((s) => isPlainInt(s) && s > 0)
    ) {
      throw new ParseError(`tensor ${idx} shape must be two positive integers`);
    }
    const offset = entry.offset;
    const nbytes = entry.nbytes;
    if (!isPlainInt(offset) || !isPlainInt(nbytes)) {
      throw new ParseError(`tensor ${idx} offset/nbytes must be integers`);
    }
    if (nbytes !== shape[0] * shape[1] * 4) {
      throw new ShapeMismatch(
        `tensor ${idx} declares shape ${JSON.stringify(shape)} ` +
          `(${shape[0] * shape[1] * 4} bytes) but nbytes = ${nbytes}`,
      );
    }
    if (offset % ALIGNMENT !== 0) {
      throw new ShapeMismatch(`tensor ${idx} offset ${offset} is not 8-byte aligned`);
    }
    if (offset < prevEnd) {
      throw new ShapeMismatch(
        `tensor ${idx} offset ${offset} overlaps or reorders previous tensors`,
      );
    }
    if (offset + nbytes > payload.length) {
      throw new ShapeMismatch(
        `tensor ${idx} needs bytes [${offset}, ${offset + nbytes}) ` +
          `but payload has only ${payload.length}`,
      );
    }
    prevEnd = offset + nbytes;
    specs.push({ offset, nbytes, shape: [shape[0], shape[1]] });
  }

  if (tensors.length !== 2 * meta.length) {
    throw new ShapeMismatch(
      `${meta.length} adapters require ${2 * meta.length} tensors, header lists ${tensors.length}`,
    );
  }

  const adapters: AdapterSpec[] = [];
  for (let i = 0; i < meta.length; i++) {
    const m = meta[i];
    if (typeof m !== "object" || m === null || Array.isArray(m)) {
      throw new ParseError(`adapter ${i} must be an object`);
    }
    const entry = m as Record<string, unknown>;
    requireKeys(entry, ADAPTER_KEYS, `adapter ${i}`, strict);
    const dIn = entry.d_in;
    const dOut = entry.d_out;
    const rank = entry.rank;
    if (![dIn, dOut, rank].every((v) => isPlainInt(v) && v > 0)) {
      throw new ParseError(`adapter ${i} dims must be positive integers`);
    }
    const scale = entry.scale;
    if (typeof scale !== "number" || !Number.isFinite(scale)) {
      throw new ParseError(`adapter ${i} scale must be a finite number`);
    }
    const aSpec = specs[2 * i];
    const bSpec = specs[2 * i + 1];
    if (aSpec.shape[0] !== rank || aSpec.shape[1] !== dIn) {
      throw new ShapeMismatch(
        `adapter ${i} factor A shape ${JSON.stringify(aSpec.shape)} != (rank, d_in) = (${rank}, ${dIn})`,
      );
    }
    if (bSpec.shape[0] !== dOut || bSpec.shape[1] !== rank) {
      throw new ShapeMismatch(
        `adapter ${i} factor B shape ${JSON.stringify(bSpec.shape)} != (d_out, rank) = (${dOut}, ${rank})`,
      );
    }
    const factors: Float32Array[] = [];
    for (const { offset, nbytes } of [aSpec, bSpec]) {
      const view = new DataView(payload.buffer, payload.byteOffset + offset, nbytes);
      const arr = new Float32Array(nbytes / 4);
      for (let t = 0; t < arr.length; t++) {
        arr[t] = view.getFloat32(t * 4, true);
        if (!Number.isFinite(arr[t])) {
          throw new NonFiniteTensor(`adapter ${i} tensor at offset ${offset} has NaN/Inf`);
        }
      }
      factors.push(arr);
    }
    adapters.push({
      name: String(entry.name),
      dIn: dIn as number,
      dOut: dOut as number,
      rank: rank as number,
      factorA: factors[0],
      factorB: factors[1],
      scale,
    });
  }
  return adapters;
}
