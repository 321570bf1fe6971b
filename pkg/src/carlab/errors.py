"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes, so new error types should
subclass the closest existing category rather than ``CarlabError`` directly.
"""


class CarlabError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(CarlabError):
    """Operand shapes are incompatible with the requested operation."""


class RankError(DimensionError):
    """A scalar (1x1) tensor was required."""


class DegenerateClassError(CarlabError):
    """Fewer than two classes, so confusion constructs are undefined."""


class EmptyBatchError(CarlabError):
    """An operation that averages over samples received zero samples."""


class ParameterError(CarlabError):
    """A configuration value or argument violates its contract."""


class NumericError(CarlabError):
    """A non-finite value appeared where finite arithmetic was required."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ProfileError(CarlabError):
    """A long-tail count profile cannot be realized."""


class IngestionError(CarlabError):
    """A dataset file could not be parsed; carries the offending line."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class EmptyDatasetError(IngestionError):
    """The dataset file contains no samples."""


class InvalidRegimeError(CarlabError):
    """The generalization bound is vacuous for this sample/class count."""


class UnsupportedModelError(CarlabError):
    """The model lies outside the hypothesis class an operation supports."""


class ReportError(CarlabError):
    """Two metric reports cannot be combined."""
