/** Typed errors matching the service's taxonomy.
 *
 * HTTP 400 bodies carry `{error, message}` where `error` is the class name;
 * `errorFromPayload` rehydrates them so callers can catch the same types
 * whether a check failed locally or on the server.
 */

export class OrthmergeError extends Error {
  constructor(message: string) {
    super(message);
    this.name = new.target.name;
  }
}

export class DimensionMismatch extends OrthmergeError {}
export class EmptyPlan extends OrthmergeError {}
export class ConstraintViolation extends OrthmergeError {}
export class UnknownAdapter extends OrthmergeError {}
export class InvalidRates extends OrthmergeError {}
export class InvalidRate extends InvalidRates {}

export class PackError extends OrthmergeError {}
export class BadMagic extends PackError {}
export class TruncatedFile extends PackError {}
export class ShapeMismatch extends PackError {}
export class NonFiniteTensor extends PackError {}

export class ParseError extends OrthmergeError {}
export class RaggedRows extends ParseError {}
export class NonFinite extends ParseError {}

/** Use of an adapter handle after close(). */
export class ClosedHandle extends OrthmergeError {}

/** Server-side error with no local counterpart (e.g. ValueError). */
export class RemoteError extends OrthmergeError {
  readonly remoteName: string;

  constructor(remoteName: string, message: string) {
    super(message);
    this.remoteName = remoteName;
  }
}

type ErrorCtor = new (message: string) => OrthmergeError;

const REGISTRY: Record<string, ErrorCtor> = {
  OrthmergeError,
  DimensionMismatch,
  EmptyPlan,
  ConstraintViolation,
  UnknownAdapter,
  InvalidRates,
  InvalidRate,
  PackError,
  BadMagic,
  TruncatedFile,
  ShapeMismatch,
  NonFiniteTensor,
  ParseError,
  RaggedRows,
  NonFinite,
};

export function errorFromPayload(name: string, message: string): OrthmergeError {
  const ctor = REGISTRY[name];
  return ctor ? new ctor(message) : new RemoteError(name, message);
}
