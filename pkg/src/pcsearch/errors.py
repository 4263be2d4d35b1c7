"""Exception types shared across the package."""


class PcsearchError(Exception):
    """Base class for all package-specific errors."""


class CsvParseError(PcsearchError):
    """Malformed CSV content; carries the offending 1-based data row."""

    def __init__(self, row, message):
        super().__init__(f"row {row}: {message}")
        self.row = row


class StoreFormatError(PcsearchError):
    """Checkpoint store directory is missing, truncated or inconsistent."""


class DuplicateWriteError(PcsearchError):
    """A (block, candidate) slot was written twice."""


class SealedStoreError(PcsearchError):
    """Write attempted on a sealed checkpoint store."""


class MissingCheckpointError(PcsearchError):
    """Requested (block, candidate) slot does not exist."""


class TrainingDivergedError(PcsearchError):
    """Loss became non-finite during training; carries the epoch index."""

    def __init__(self, epoch, message="non-finite training loss"):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch


class SearchAborted(PcsearchError):
    """Combination search hit a non-finite gradient or divergent fine-tune.

    The partial history collected up to the failing step is attached so a
    caller can still inspect what was explored.
    """

    def __init__(self, step, cause, history, selection):
        super().__init__(f"search aborted at step {step}: {cause}")
        self.step = step
        self.cause = cause
        self.history = history
        self.selection = selection


class ConfigError(PcsearchError):
    """Run configuration file is invalid or contains unknown keys."""
