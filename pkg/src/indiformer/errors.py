"""Exception taxonomy shared by all indiformer modules."""


class IndiformerError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(IndiformerError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigurationError(IndiformerError):
    """A structural setting violates a hard constraint (e.g. chunk != 2*hop)."""


class InvalidInputError(IndiformerError):
    """Input data fails a precondition (lengths, rates, emptiness, ranges)."""


class NumericError(IndiformerError):
    """A computation produced or received NaN/Inf values."""


class UnsupportedChannelCountError(IndiformerError):
    """Audio file is not mono."""


class UnsupportedCodecError(IndiformerError):
    """Audio file is not PCM 16-bit or IEEE float 32-bit."""


class CheckpointError(IndiformerError):
    """Checkpoint file is corrupt or disagrees with the configured model."""
