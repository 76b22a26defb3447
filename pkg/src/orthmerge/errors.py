"""Exception taxonomy shared across the package.

Validation errors (plan/rate/dimension problems) and data errors (container
and JSON parsing) are kept in separate branches so the CLI can map them to
distinct exit codes.
"""

from __future__ import annotations


class OrthmergeError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(OrthmergeError):
    """Vector or matrix dimensions do not agree."""


class EmptyPlan(OrthmergeError):
    """A merge plan with no entries."""


class ConstraintViolation(OrthmergeError):
    """Sum of keep rates exceeds the orthogonal-merge capacity."""


class UnknownAdapter(OrthmergeError):
    """A plan entry references an adapter name that was not provided."""


class InvalidRates(OrthmergeError):
    """A dropout-rate vector is outside its valid domain."""


class InvalidRate(InvalidRates):
    """A single dropout rate makes the requested operation undefined."""


class PackError(OrthmergeError):
    """Base class for adapter-pack container errors."""


class BadMagic(PackError):
    """Container does not start with the expected magic bytes."""


class TruncatedFile(PackError):
    """Container is shorter than its own framing requires."""


class ShapeMismatch(PackError):
    """Declared tensor shapes, sizes, or offsets are inconsistent."""


class NonFiniteTensor(PackError):
    """Tensor payload contains NaN or infinite values."""


class ParseError(OrthmergeError):
    """Text input is not the expected JSON form."""


class RaggedRows(ParseError):
    """Matrix rows have differing lengths."""


class NonFinite(ParseError):
    """Numeric JSON input contains NaN or infinite values."""
