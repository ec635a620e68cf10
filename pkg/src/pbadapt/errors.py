"""Exception types raised across the package."""


class PbAdaptError(Exception):
    """Base class for all package errors."""


class ValidationError(PbAdaptError, ValueError):
    pass


class DimensionMismatch(ValidationError):
    pass


class ParseError(ValidationError):
    pass


class EmptyDatasetError(ValidationError):
    pass


class NonFiniteError(ValidationError):
    pass


class TrainingDiverged(PbAdaptError, ArithmeticError):
    """Loss or gradient became non-finite during SGD."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")


class UnstableTraining(PbAdaptError, RuntimeError):
    """Every restart of a trainer diverged."""


class NoFeatureMap(ValidationError):
    """A restricted quantity was requested for a model without a hidden layer."""


class IllegalPrior(PbAdaptError):
    """The prior was trained on data the bound must not depend on."""


class UndefinedCorrelation(ValidationError):
    pass


class TheoremViolation(PbAdaptError, AssertionError):
    """Two exact computation paths that must agree did not."""
