"""Exception types raised across the package."""


class EM3Error(Exception):
    """Base class for package errors."""


class DimensionError(EM3Error, ValueError):
    """Operand shapes or widths do not agree."""


class ConfigError(EM3Error, ValueError):
    """A configuration value is outside its admissible range."""


class DegenerateInputError(EM3Error, ValueError):
    """An input is structurally valid but leaves nothing to compute on."""


class StateError(EM3Error, RuntimeError):
    """An operation was called in a state that does not allow it."""


class DataError(EM3Error, ValueError):
    """Labels or records violate their declared domain."""


class NumericError(EM3Error, FloatingPointError):
    """A loss or activation became non-finite."""


class StaleCacheError(EM3Error):
    """A persisted cache no longer matches the inputs it was built from."""


class CorruptFileError(EM3Error):
    """A binary file failed its magic, version or checksum check."""
