"""Exception types shared across the package."""


class MaskLabError(Exception):
    """Base class for all package errors."""


class ShapeError(MaskLabError):
    """Operand shapes do not conform to an operation's contract."""


class NonFiniteError(MaskLabError):
    """A computation produced NaN or infinity."""


class ConfigError(MaskLabError):
    """Invalid experiment configuration (maps to CLI exit code 2)."""


class DataFormatError(MaskLabError):
    """Malformed dataset file (bad magic, truncation, length mismatch)."""


class TrainingDivergence(MaskLabError):
    """Training loss became non-finite (maps to CLI exit code 3)."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"non-finite training loss at epoch {epoch}")
