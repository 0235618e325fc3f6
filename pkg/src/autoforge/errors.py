"""Exception taxonomy shared across the engine.

The CLI maps these onto its exit codes, so raise the most specific class
that applies.
"""


class AutoforgeError(Exception):
    """Base class for all engine errors."""


class ShapeError(AutoforgeError):
    """Tensor shapes incompatible with the requested operation."""


class ContractError(AutoforgeError):
    """An operation was called outside its contract (bad mode, bad target set, ...)."""


class ConfigError(AutoforgeError):
    """Invalid or unknown configuration."""


class DataError(AutoforgeError):
    """Dataset-level problem (empty directory, unreadable manifest)."""


class IngestionError(DataError):
    """A single image file could not be loaded. Carries the offending path."""

    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


class NumericalError(AutoforgeError):
    """Non-finite values encountered where finite ones are required."""


class CheckpointFormatError(AutoforgeError):
    """Checkpoint file is missing, truncated, or not in the expected format."""


class AdapterError(AutoforgeError):
    """External classifier violated the adapter protocol."""
