"""Exception types shared across the package."""


class FedBenchError(Exception):
    """Base class for all errors raised by fedbench."""


class InvalidInputError(FedBenchError, ValueError):
    """An argument violates an operation's preconditions."""


class ConfigError(FedBenchError, ValueError):
    """An experiment or trainer configuration is inconsistent."""


class DataFormatError(FedBenchError):
    """A dataset file on disk is malformed."""

    def __init__(self, path, offset: int, message: str):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{self.path} (offset {offset}): {message}")
