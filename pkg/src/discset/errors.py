"""
Exceptions raised by the discset package. The command line maps each one onto an exit code.
"""


class DiscsetError(Exception):
    """Base class for every error discset raises on purpose."""

    exitcode = 4


class ConfigError(DiscsetError):
    """Configuration file or command line values that cannot be used."""

    exitcode = 2


class CloudFormatError(DiscsetError):
    """
    Point cloud file that cannot be read.

    :param message: what went wrong.
    :param location: 1-based line number (xyz, ascii ply) or vertex element index (binary ply), if known.
    """

    exitcode = 3

    def __init__(self, message: str, location: int | None = None):
        self.location = location
        if location is not None:
            message = f"{message} (at {location})"
        super().__init__(message)


class PipelineError(DiscsetError):
    """A pipeline stage failed. `stage` names the stage so the log says where it broke."""

    exitcode = 4

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"Stage '{stage}' failed: {cause}")
