"""Exception types shared across the package."""


class ModbiasError(Exception):
    """Base class for all toolkit errors."""


class DataError(ModbiasError):
    """Invalid data, file format, or configuration."""


class TrainingDivergedError(ModbiasError):
    """Optimization produced a non-finite loss."""
