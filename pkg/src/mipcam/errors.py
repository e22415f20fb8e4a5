"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration/validation problems exit
with 2, numeric failures with 3, anything else with 1.
"""


class MipcamError(Exception):
    """Base class for all package errors."""


class ValidationError(MipcamError, ValueError):
    """An argument or data structure violates a documented precondition."""


class ConfigError(ValidationError):
    """A configuration value or file is invalid."""


class ShapeError(ValidationError):
    """Array shapes are inconsistent with each other or with the contract."""


class GenerationError(MipcamError):
    """Phantom generation could not satisfy its placement constraints."""


class StratificationError(MipcamError):
    """A cross-validation fold would contain a single class."""


class NumericError(MipcamError):
    """A numeric failure (non-finite loss, invalid logits) occurred."""


class DatasetWriteError(MipcamError):
    """Writing dataset artifacts to disk failed."""


class DegenerateCamWarning(UserWarning):
    """An activation map had no positive response and was zeroed out."""
