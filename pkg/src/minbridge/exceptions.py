"""Exception hierarchy.

Validation errors (bad input, bad configuration) and estimation errors
(degenerate or singular problems) are kept apart so callers such as the
command line can map them to distinct exit codes.
"""

from __future__ import annotations


class MinbridgeError(Exception):
    """Base class for all package errors."""


class ValidationError(MinbridgeError, ValueError):
    """Input data or configuration is malformed."""


class EstimationError(MinbridgeError):
    """An estimator could not produce a result for well-formed input."""


# validation ---------------------------------------------------------------


class ParseError(ValidationError):
    pass


class MissingCell(ValidationError):
    pass


class TreatmentNotConstantWithinUnit(ValidationError):
    pass


class HorizonTooLarge(ValidationError):
    pass


class ConfigInvalid(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class DomainError(ValidationError):
    pass


class ExponentOutOfWindow(ValidationError):
    pass


class NonFiniteInput(ValidationError):
    pass


# estimation ---------------------------------------------------------------


class DegenerateGroup(EstimationError):
    pass


class SingularSystem(EstimationError):
    pass


class SingularPenalizedSystem(SingularSystem):
    pass


class NonPositiveDefiniteWeight(EstimationError):
    pass


class SingularDesign(EstimationError):
    pass


class RankTooLarge(EstimationError):
    pass


class EigenFailure(EstimationError):
    pass


class SingularConfounderCov(EstimationError):
    pass


class SingularVbar(EstimationError):
    pass


class RankDeficientLoadings(EstimationError):
    pass


class TargetNotUnique(EstimationError):
    pass


class SingularSigma0(EstimationError):
    pass
