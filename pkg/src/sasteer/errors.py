"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised for non-finite values, bad shapes or out-of-range arguments."""


class CapacityError(ValueError):
    """Raised when an exhaustive routine is asked to handle too large an input."""


class FormatError(ValueError):
    """Raised when a dataset or checkpoint file cannot be parsed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedVersionError(FormatError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch):
        super().__init__(f"training diverged: non-finite loss in epoch {epoch}")
        self.epoch = epoch
