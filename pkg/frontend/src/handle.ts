/** Opaque reference to a loaded adapter set.
 *
 * Buffers are copied at the boundary in both directions; nothing retains a
 * view into caller-owned memory.  A closed handle rejects all further use.
 */

import { ClosedHandle, DimensionMismatch, EmptyPlan } from "./errors.js";
import { loadPack, savePack, type AdapterSpec } from "./pack.js";

export class AdapterHandle {
  private bytes: Uint8Array | null;
  private specs: AdapterSpec[] | null;

  private constructor(bytes: Uint8Array, specs: AdapterSpec[]) {
    this.bytes = bytes;
    this.specs = specs;
  }

  /** Validates and takes a private copy of the pack bytes. */
  static fromPackBytes(data: Uint8Array): AdapterHandle {
    const copy = data.slice();
    return new AdapterHandle(copy, loadPack(copy));
  }

  /** Serializes the adapters into canonical pack form. */
  static fromAdapters(adapters: readonly AdapterSpec[]): AdapterHandle {
    if (adapters.length === 0) {
      throw new EmptyPlan("adapter set must not be empty");
    }
    const bytes = savePack(adapters);
    return new AdapterHandle(bytes, loadPack(bytes));
  }

  private require(): AdapterSpec[] {
    if (this.specs === null) {
      throw new ClosedHandle("adapter handle is closed");
    }
    return this.specs;
  }

  get closed(): boolean {
    return this.specs === null;
  }

  get count(): number {
    return this.require().length;
  }

  get names(): string[] {
    return this.require().map((a) => a.name);
  }

  get ranks(): number[] {
    return this.require().map((a) => a.rank);
  }

  /** Common input width; adapters in one handle must agree on it. */
  get dIn(): number {
    return this.commonDim("dIn");
  }

  /** Common output width; adapters in one handle must agree on it. */
  get dOut(): number {
    return this.commonDim("dOut");
  }

  private commonDim(field: "dIn" | "dOut"): number {
    const specs = this.require();
    const values = new Set(specs.map((a) => a[field]));
    if (values.size !== 1) {
      throw new DimensionMismatch(
        `adapters disagree on ${field}: ${JSON.stringify([...values].sort((a, b) => a - b))}`,
      );
    }
    return specs[0][field];
  }

  /** Copy of the canonical pack bytes. */
  packBytes(): Uint8Array {
    this.require();
    return (this.bytes as Uint8Array).slice();
  }

  /** Copies of the adapter specs, including their float32 factors. */
  adapters(): AdapterSpec[] {
    return this.require().map((a) => ({
      ...a,
      factorA: a.factorA.slice(),
      factorB: a.factorB.slice(),
    }));
  }

  close(): void {
    this.bytes = null;
    this.specs = null;
  }
}
