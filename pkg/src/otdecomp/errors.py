"""Exception hierarchy.

``ValidationError`` subclasses signal bad inputs (CLI exit code 1),
``ContractViolation`` signals that a mathematical bound failed (exit code 2).
"""


class OTError(Exception):
    """Base class for all package errors."""


class ValidationError(OTError, ValueError):
    """Input violates a documented precondition."""


class DimensionMismatch(ValidationError):
    pass


class InvalidWeights(ValidationError):
    pass


class IndexOutOfRange(ValidationError, IndexError):
    pass


class Unsupported(ValidationError):
    pass


class SizeCapExceeded(ValidationError):
    pass


class DimensionError(ValidationError):
    pass


class TooLarge(ValidationError):
    pass


class OffsetTooSmall(ValidationError):
    pass


class MassMismatch(ValidationError):
    pass


class LayerMismatch(ValidationError):
    pass


class EnvelopeViolation(ValidationError):
    pass


class NoReference(ValidationError):
    pass


class DegenerateFit(ValidationError):
    pass


class DomainError(ValidationError):
    pass


class CriterionNotMet(ValidationError):
    pass


class HypothesisViolated(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class NumericalFailure(OTError, RuntimeError):
    """Solver could not resolve degeneracy; indicates a bug."""


class QuadratureFailure(OTError, RuntimeError):
    pass


class ContractViolation(OTError):
    """A bound that must hold did not."""
