"""Exception types shared across the package."""


class BayesVolterraError(Exception):
    """Base class for errors raised by this package."""


class NumericFailure(BayesVolterraError):
    """A linear solve or bound evaluation produced an unusable result.

    Carries the sweep index when raised from inside the fit loop.
    """

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration

    def __str__(self):
        base = super().__str__()
        if self.iteration is not None:
            return f"sweep {self.iteration}: {base}"
        return base


class DataFormatError(BayesVolterraError):
    """Raised when an input CSV cannot be parsed into a dataset."""


class ModelFormatError(BayesVolterraError):
    """Raised when a stored model directory fails validation."""
