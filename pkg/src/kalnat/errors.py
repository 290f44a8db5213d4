"""Exception types raised across the package."""

import numpy as np


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class SingularMatrixError(np.linalg.LinAlgError):
    """A matrix that must be positive definite failed to factorize.

    ``pivot`` is the 1-based index of the leading minor that is not
    positive definite, as reported by LAPACK ``potrf``.
    """

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class DegenerateInputError(ValueError):
    """An input row has zero norm where a direction is required."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class ConfigError(ValueError):
    """An experiment configuration is invalid."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class CheckpointFormatError(ValueError):
    """A checkpoint file is malformed or does not match the run."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
