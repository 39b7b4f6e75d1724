"""Exception types shared across the package.

Everything derives from UnpgKitError so callers can catch the whole
family; most are also ValueError subclasses because they signal bad
arguments rather than internal failures.
"""


class UnpgKitError(Exception):
    """Base class for all package-specific errors."""


class ZeroNormError(UnpgKitError, ValueError):
    """Vector norm is below the normalization threshold."""


class DimensionMismatchError(UnpgKitError, ValueError):
    """Operands have incompatible dimensions or shapes."""


class LabelOutOfRangeError(UnpgKitError, ValueError):
    """A class label is outside [0, num_classes)."""


class EmptyInputError(UnpgKitError, ValueError):
    """An operation received an empty list it cannot handle."""


class EmptyPositivesError(EmptyInputError):
    """The loss needs at least one positive score."""


class EmptyNegativesError(EmptyInputError):
    """Threshold metrics need at least one negative score."""


class EmptyGalleryError(EmptyInputError):
    """Identification needs a nonempty gallery."""


class OriginMismatchError(UnpgKitError, ValueError):
    """A pair set has the wrong origin tag for this operation."""


class InsufficientDataError(UnpgKitError, ValueError):
    """The dataset cannot supply the requested batch."""


class InsufficientPairsError(UnpgKitError, ValueError):
    """Fewer pairs are available than the requested sample size."""


class ConfigInvalidError(UnpgKitError, ValueError):
    """A configuration value violates its contract; message names the field."""


class CheckpointCorruptError(UnpgKitError, ValueError):
    """A checkpoint file is missing, truncated, or unparseable."""


class RunIncompleteError(UnpgKitError, ValueError):
    """A run directory lacks the outputs of a completed run."""


class NumericError(UnpgKitError, ArithmeticError):
    """A non-finite value surfaced where finiteness is required."""
