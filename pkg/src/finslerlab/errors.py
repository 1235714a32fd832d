"""Exception hierarchy shared by every finslerlab module."""


class FinslerError(Exception):
    """Base class for all library errors."""


class ContextMismatch(FinslerError):
    pass


class DivisionByZeroValue(FinslerError, ZeroDivisionError):
    pass


class DomainError(FinslerError, ValueError):
    pass


class OrderExceeded(FinslerError):
    pass


class SingularValuePart(FinslerError):
    pass


class InvalidPoint(FinslerError, ValueError):
    pass


class DegenerateMetric(FinslerError):
    pass


class InvalidChange(FinslerError, ValueError):
    pass


class CompatibilityViolated(FinslerError):
    """A Matsumoto-type system received a right-hand side that breaks its
    compatibility conditions. Almost always an upstream formula bug."""


class HypothesisViolated(FinslerError):
    pass


class InsufficientSamples(FinslerError):
    pass


class SamplingExhausted(FinslerError):
    pass


class ConfigError(FinslerError, ValueError):
    pass


class EvaluationFailed(FinslerError):
    pass
