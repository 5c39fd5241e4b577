"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
NumericError -> 3, VerificationError -> 4.
"""


class ZoqlabError(Exception):
    """Base class for all package errors."""


class UsageError(ZoqlabError):
    """Bad command line or config usage."""


class DimensionError(ZoqlabError, ValueError):
    """Tensor shapes incompatible with the requested operation."""


class DataError(ZoqlabError, ValueError):
    """Malformed or unusable input data (corpus, checkpoints, configs)."""


class InvalidStateError(ZoqlabError, ValueError):
    """A quantizer/smoothing state violates its invariants (e.g. step <= 0)."""


class NumericError(ZoqlabError, ArithmeticError):
    """A computation produced non-finite values where finiteness is required."""


class VerificationError(ZoqlabError):
    """A theory verification check failed its stated margin."""
