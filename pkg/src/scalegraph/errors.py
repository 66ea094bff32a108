"""Exception types shared across the package.

The CLI maps these onto exit codes, so library code should raise the most
specific one that applies instead of bare ValueError.
"""


class ScalegraphError(Exception):
    """Base class for all package errors."""


class ValidationError(ScalegraphError):
    """Malformed data: bad shapes, broken invariants, unparseable records."""


class ShapeError(ValidationError):
    """Operands with incompatible shapes; message names both operands."""


class NumericError(ScalegraphError):
    """Non-finite values or numerically impossible requests."""


class UsageError(ScalegraphError):
    """Bad command-line or configuration usage."""
