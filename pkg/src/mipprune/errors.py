"""Exception types shared across the package."""


class MipPruneError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgument(MipPruneError, ValueError):
    """An argument violates a documented precondition."""


class UnsupportedFeature(MipPruneError, ValueError):
    """The requested configuration is deliberately out of scope."""


class ModelFormatError(MipPruneError, ValueError):
    """A model, dataset, or solution file failed to parse or validate."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TrainingDiverged(MipPruneError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


class NoIncumbent(MipPruneError, RuntimeError):
    """Branch and bound exhausted its limits without a feasible solution."""
