"""Exception types shared across the package.

ValidationError covers malformed inputs and configuration (CLI exit code 1),
NumericError covers runtime numerical failures such as divergence or
non-finite activations (CLI exit code 2).
"""


class ValidationError(ValueError):
    """Input or configuration rejected before any computation ran."""


class NumericError(ArithmeticError):
    """A computation produced non-finite or otherwise unusable numbers."""
