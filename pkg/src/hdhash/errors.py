"""Exception hierarchy shared by all hdhash modules.

The CLI maps these onto process exit codes: ConfigError -> 1 (usage),
DataError and subclasses -> 2 (bad data), DivergenceError -> 3.
"""


class HdhError(Exception):
    """Base class for all hdhash errors."""


class ConfigError(HdhError):
    """Invalid hyperparameter, flag, or configuration value."""


class DataError(HdhError):
    """Problem with user-supplied data (files, matrices, codes)."""


class FormatError(DataError):
    """File structure is not what the declared format requires."""


class ParseError(DataError):
    """A cell could not be parsed; carries 1-based file coordinates."""

    def __init__(self, message, row=None, col=None):
        super().__init__(message)
        self.row = row
        self.col = col


class ShapeError(DataError):
    """Array dimensions do not match the operation's contract."""


class DomainError(DataError):
    """Value outside the operation's input domain (e.g. non-binary bits)."""


class CapacityError(DataError):
    """Request exceeds a hard size limit (rows, enumeration budget)."""


class VersionError(FormatError):
    """Serialized artifact was written by an unsupported format version."""


class ChecksumError(FormatError):
    """Stored checksum does not match the payload."""


class TruncationError(FormatError):
    """File ends before the declared content does."""


class DivergenceError(HdhError):
    """Training produced a non-finite objective or parameters."""

    def __init__(self, stage, iteration, message=None):
        self.stage = stage
        self.iteration = iteration
        if message is None:
            message = f"non-finite values in {stage} training at iteration {iteration}"
        super().__init__(message)
