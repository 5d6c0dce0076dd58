class KwsError(Exception):
    """Base class for all errors raised by kwspot."""


class FormatError(KwsError):
    """A file could not be parsed (bad magic, truncated data, malformed header)."""


class UnsupportedFormatError(FormatError):
    """A well-formed file uses a variant we do not accept (sample rate, channels, ...)."""


class ParameterError(KwsError, ValueError):
    """An argument is outside its valid domain."""


class ShapeError(KwsError, ValueError):
    """Tensor or feature geometry does not line up."""


class EmptyDatasetError(KwsError):
    pass


class IncompatibleCheckpointError(KwsError):
    pass


class ConfigError(KwsError):
    """Configuration rejected before any work started."""
