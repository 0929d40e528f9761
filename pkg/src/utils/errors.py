"""
Exception hierarchy for HydroTrack

Every error carries the process exit code the CLI reports for it:
1 validation error, 2 data error, 3 internal error.
"""
from typing import Any, Dict, Optional


class HydroTrackError(Exception):
    """Base class for all HydroTrack errors"""
    exit_code = 3

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {
            'error': type(self).__name__,
            'message': self.message,
            'details': self.details,
        }


class ValidationError(HydroTrackError):
    """Invalid parameters or configuration"""
    exit_code = 1


class DataError(HydroTrackError):
    """Input data cannot be processed"""
    exit_code = 2


# Validation errors
class ConfigError(ValidationError):
    pass


class InvalidBand(ValidationError):
    pass


class InvalidFrame(ValidationError):
    pass


class InvalidSpec(ValidationError):
    pass


# Data errors
class ZeroIntensity(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class DegenerateReference(DataError):
    pass


class TooShort(DataError):
    pass


class NonUniformSampling(DataError):
    pass


class DegenerateData(DataError):
    pass


class VersionMismatch(DataError):
    pass


class EmptyTestSet(DataError):
    pass


class TooFewGroups(DataError):
    pass


class TooFewRows(DataError):
    pass


class ModelTooLarge(DataError):
    pass


class CorruptModel(DataError):
    pass


class OutOfOrderFrame(DataError):
    pass


def exit_code_for(error: BaseException) -> int:
    """Map any exception to the CLI exit code contract"""
    if isinstance(error, HydroTrackError):
        return error.exit_code
    if isinstance(error, OSError):
        return DataError.exit_code
    return HydroTrackError.exit_code
