class ContractError(ValueError):
    """An argument violates an operation's precondition or a type invariant."""


class ConfigError(ValueError):
    """Invalid generator, model or training configuration."""


class DatasetFormatError(ValueError):
    """A dataset or checkpoint file could not be parsed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
