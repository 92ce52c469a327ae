"""Exception hierarchy shared by every module.

Contract violations cover bad arguments and shape mismatches; numeric
errors cover non-finite values produced during evaluation. The CLI maps
the former to exit code 1 and the latter to exit code 2.
"""


class ToolkitError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(ToolkitError):
    """An argument or precondition was violated by the caller."""


class NumericError(ToolkitError):
    """A computation produced non-finite or otherwise unusable values."""


class DegeneracyError(NumericError):
    """Input is numerically degenerate (rank deficient, antiparallel, ...)."""
