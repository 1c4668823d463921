"""Exception hierarchy shared across the package."""


class MergesimError(Exception):
    """Base class for all package errors."""


class ContractViolation(MergesimError):
    """An operation was called outside its documented preconditions."""


class PlacementError(MergesimError):
    """Vehicle placement could not satisfy the spacing constraints."""


class PrerequisiteError(MergesimError):
    """A required trained policy or checkpoint is missing."""


class ConfigError(MergesimError):
    """Configuration file is missing, malformed, or inconsistent."""


class CheckpointError(MergesimError):
    """Checkpoint file could not be read or does not match expectations."""


class TraceFormatError(MergesimError):
    """A trajectory file failed validation."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number
