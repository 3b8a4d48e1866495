"""Exception hierarchy shared by every module.

The CLI maps each category onto an exit code, so new errors should
subclass one of the three roots below rather than ``Exception``.
"""


class HWformerError(Exception):
    """Base class for all package errors."""


class ConfigError(HWformerError, ValueError):
    """Inconsistent shapes or hyperparameters."""


class UsageError(HWformerError, RuntimeError):
    """An API was called in a state or order it does not support."""


class NumericError(HWformerError, ArithmeticError):
    """A computation produced or received non-finite values."""


class DataError(HWformerError, IOError):
    """Unreadable, malformed or incompatible files."""


class ImageParseError(DataError):
    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


class MalformedHeaderError(ImageParseError):
    pass


class TruncatedPayloadError(ImageParseError):
    pass


class UnsupportedDepthError(ImageParseError):
    pass


class UnsupportedFormatError(ImageParseError):
    pass


class CheckpointError(DataError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class ArchitectureMismatchError(CheckpointError):
    pass
