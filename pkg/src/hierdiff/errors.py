"""Exception hierarchy shared across the package.

The CLI maps these categories onto exit codes, so new error types should
subclass one of the categories below rather than raising bare ValueError.
"""


class HierdiffError(Exception):
    """Base class for all package errors."""


class ParameterError(HierdiffError, ValueError):
    """Invalid model or experiment parameters (bad counts, out-of-range noise)."""


class DataFormatError(HierdiffError, ValueError):
    """Malformed external input (transcript records, serialized grammars)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InsufficientDataError(HierdiffError, ValueError):
    """Not enough samples/trajectories for the requested estimator."""


class ZeroNormalizationError(HierdiffError, ArithmeticError):
    """A message summed to zero: the evidence is inconsistent with the grammar."""


class NotGenerableError(HierdiffError, ValueError):
    """A leaf string (or an internal block) has no parse under the rule table."""


class PassesNotRunError(HierdiffError, RuntimeError):
    """Marginals requested from a message field whose sweeps are not both valid."""


class BracketingError(HierdiffError, ValueError):
    """A root or critical point is not bracketed by the supplied interval/grid."""
