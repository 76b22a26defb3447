/** Bindings for the orthogonal adapter merge service.
 *
 * Entry points: `sampleMasks` (bit-identical local mask sampling),
 * `OrthmergeClient.boundMerge` (server-side merges with byte-stable audit
 * artifacts), and `loadPack`/`savePack` (the adapter container codec).
 */

export const VERSION = "0.1.0";

export {
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
  ClosedHandle,
  RemoteError,
  errorFromPayload,
} from "./errors.js";

export { splitmix64Mix, deriveState, deriveStream, Stream, type StreamKey } from "./rng.js";

export {
  Q_TOL,
  fsum,
  checkRates,
  checkOrthogonalCapacity,
  keepProbability,
  keepProbabilities,
  chainDraws,
  defaultStreamKeys,
  sampleMcMasks,
  sampleOrthogonalMasks,
  sampleMasks,
  sampleMaskRows,
  type MaskSet,
  type MaskStrategy,
} from "./masks.js";

export {
  MAGIC,
  ALIGNMENT,
  CanonicalFloat,
  canonicalFloatText,
  canonicalJsonBytes,
  savePack,
  loadPack,
  type AdapterSpec,
} from "./pack.js";

export { AdapterHandle } from "./handle.js";

export {
  OrthmergeClient,
  type MergeStrategy,
  type MergeOptions,
  type MergeAudit,
  type MaskDump,
  type SampleMasksRequest,
  type MergeRequest,
  type VerifyRequest,
  type AnalyzeRequest,
} from "./client.js";
