"""Merging low-rank adapter outputs with orthogonal Monte-Carlo dropout masks.

Public surface: adapter/plan types and validation (`model`), the pinned
counter-based random streams (`rng`), mask samplers (`masks`), the three
merge strategies (`merge`), statistical certification suites (`verify`),
the binary adapter container plus JSON text forms (`pack`), a
microbenchmark (`bench`), the CLI (`cli`) and the HTTP service (`service`,
imported lazily so the core stays light).
"""

from .errors import (
    BadMagic,
    ConstraintViolation,
    DimensionMismatch,
    EmptyPlan,
    InvalidRate,
    InvalidRates,
    NonFinite,
    NonFiniteTensor,
    OrthmergeError,
    PackError,
    ParseError,
    RaggedRows,
    ShapeMismatch,
    TruncatedFile,
    UnknownAdapter,
)
from .masks import (
    MaskSet,
    chain_draws,
    default_stream_keys,
    dump_payload,
    keep_probabilities,
    keep_probability,
    sample_dump,
    sample_mask_batch,
    sample_mc_masks,
    sample_orthogonal_masks,
)
from .merge import (
    MergeOutput,
    audit_payload,
    audited_merge,
    merge_direct,
    merge_mc_dropout,
    merge_orthogonal,
    run_plan,
)
from .model import (
    BaseLayer,
    LowRankAdapter,
    MergePlan,
    MergeStrategy,
    PlanEntry,
    apply_adapter,
    check_orthogonal_capacity,
    check_rates,
    materialize_delta,
    validate_plan,
)
from .pack import (
    canonical_json,
    load_adapter_pack,
    load_matrix,
    load_vector,
    save_adapter_pack,
)
from .rng import Stream, StreamKey, derive_state, derive_stream
from .verify import (
    InterferenceReport,
    VerifyReport,
    analyze_interference,
    run_consistency_suite,
    run_orthogonality_suite,
    run_selected_suites,
    run_unbiasedness_suite,
    synthesize_fixture,
)

__version__ = "0.1.0"

__all__ = [
    "BadMagic",
    "BaseLayer",
    "ConstraintViolation",
    "DimensionMismatch",
    "EmptyPlan",
    "InterferenceReport",
    "InvalidRate",
    "InvalidRates",
    "LowRankAdapter",
    "MaskSet",
    "MergeOutput",
    "MergePlan",
    "MergeStrategy",
    "NonFinite",
    "NonFiniteTensor",
    "OrthmergeError",
    "PackError",
    "ParseError",
    "PlanEntry",
    "RaggedRows",
    "ShapeMismatch",
    "Stream",
    "StreamKey",
    "TruncatedFile",
    "UnknownAdapter",
    "VerifyReport",
    "analyze_interference",
    "apply_adapter",
    "audit_payload",
    "audited_merge",
    "canonical_json",
    "chain_draws",
    "check_orthogonal_capacity",
    "check_rates",
    "default_stream_keys",
    "derive_state",
    "derive_stream",
    "dump_payload",
    "keep_probabilities",
    "keep_probability",
    "load_adapter_pack",
    "load_matrix",
    "load_vector",
    "materialize_delta",
    "merge_direct",
    "merge_mc_dropout",
    "merge_orthogonal",
    "run_consistency_suite",
    "run_orthogonality_suite",
    "run_plan",
    "run_selected_suites",
    "run_unbiasedness_suite",
    "sample_dump",
    "sample_mask_batch",
    "sample_mc_masks",
    "sample_orthogonal_masks",
    "save_adapter_pack",
    "synthesize_fixture",
    "validate_plan",
    "__version__",
]
