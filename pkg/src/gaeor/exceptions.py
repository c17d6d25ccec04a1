"""Exception hierarchy shared by the library and the command line."""


class GAEorError(Exception):
    """Base class for all package errors."""


class ConfigurationError(GAEorError, ValueError):
    """Invalid configuration value, shape or count."""


class DataError(GAEorError, RuntimeError):
    """A dataset could not be ingested or written."""


class NumericError(GAEorError, FloatingPointError):
    """A loss or gradient became non-finite during training."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}
