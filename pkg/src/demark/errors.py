"""Exception types shared across the package."""


class DemarkError(Exception):
    """Base class for all package errors."""


class InputError(DemarkError, ValueError):
    """Rejected input: bad shapes, unreadable paths, invalid parameters."""


class CheckpointError(DemarkError):
    """Checkpoint missing keys, shape conflicts, or unreadable files."""


class TrainingDiverged(DemarkError):
    """Raised when a loss term turns non-finite during training."""

    def __init__(self, message, breakdown=None):
        super().__init__(message)
        self.breakdown = breakdown
