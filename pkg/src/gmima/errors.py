"""Exception hierarchy.

Every error carries a module-qualified ``code`` (e.g. ``logit.PerfectSeparation``)
that the command line surfaces on stderr. Validation errors map to exit
status 1, estimation errors to exit status 2.
"""


class GmimaError(Exception):
    """Base class for all package errors."""

    module = "gmima"

    @property
    def code(self) -> str:
        return f"{self.module}.{type(self).__name__}"


class ValidationError(GmimaError, ValueError):
    """Bad input: schema, file contents, arguments."""


class EstimationError(GmimaError, ArithmeticError):
    """A numerical procedure could not produce an estimate."""


# tabular
class MissingColumn(ValidationError):
    module = "tabular"


class TypeViolation(ValidationError):
    module = "tabular"


class DuplicateId(ValidationError):
    module = "tabular"


class SchemaError(ValidationError):
    module = "tabular"


class EmptyEligibleSet(ValidationError):
    module = "tabular"


# logit
class DimensionMismatch(ValidationError):
    module = "logit"


class RankDeficient(EstimationError):
    module = "logit"


class PerfectSeparation(EstimationError):
    module = "logit"


class NotConverged(EstimationError):
    module = "logit"


class TooFewClusters(ValidationError):
    module = "logit"


class FocusNotBinary(ValidationError):
    module = "logit"


# patterns
class EmptyCountry(ValidationError):
    module = "patterns"


class EmptyCompleteCases(EstimationError):
    module = "patterns"


class PatternMismatch(ValidationError):
    module = "patterns"


# impute
class NoDonorsInCountry(EstimationError):
    module = "impute"


class AllMissingColumn(EstimationError):
    module = "impute"


class TooFewImputations(ValidationError):
    module = "impute"


class UnsupportedImputation(ValidationError):
    module = "impute"


# averaging
class ModelSpaceTooLarge(ValidationError):
    module = "averaging"


class NonFiniteIC(EstimationError):
    module = "averaging"


class LengthMismatch(ValidationError):
    module = "averaging"


class InvalidWeights(ValidationError):
    module = "averaging"


# simulate
class ConfigError(ValidationError):
    module = "simulate"


class DegenerateDesign(EstimationError):
    module = "simulate"


# report
class InvalidBinWidth(ValidationError):
    module = "report"
