"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class NumericError(ArithmeticError):
    """A numerical operation failed (singular matrix, covariance collapse, ...).

    ``step`` carries the filter time index when the failure happened inside a
    recursion, otherwise None.
    """

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class TrainingError(RuntimeError):
    """Training diverged or produced non-finite values.

    ``epoch`` is the epoch index at which the failure was detected.
    """

    def __init__(self, message, epoch=None):
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)
        self.epoch = epoch


class IngestionError(ValueError):
    """A data file violates the expected format; ``row`` names the offender."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)
        self.row = row


class FormatError(IOError):
    """Binary container corruption: bad magic, version, or checksum."""
