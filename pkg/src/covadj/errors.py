"""Exception types raised across the package."""


class CovadjError(Exception):
    """Base class for all package errors."""


class ConfigError(CovadjError):
    """Invalid scenario, DGM, model or design configuration."""


class CalibrationError(CovadjError):
    """A calibration routine failed to converge or had no valid bracket."""


class ResamplingError(CovadjError):
    """Stratified resampling could not fill a stratum."""


class FitError(CovadjError):
    """Model fitting failed (empty data, numerical overflow, ...)."""


class AnalysisError(CovadjError):
    """An interim or final analysis could not produce a decision statistic."""
