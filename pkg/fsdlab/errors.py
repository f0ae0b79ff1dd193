"""Exception taxonomy shared by every fsdlab module."""


class FsdLabError(Exception):
    """Base class for all fsdlab errors."""


class InvalidDistribution(FsdLabError, ValueError):
    """A probability vector failed ProbDist validation."""


class AllZero(InvalidDistribution):
    """normalize() received weights that are all zero."""


class NegativeWeight(InvalidDistribution):
    """normalize() received a negative weight."""


class NonPositiveTemperature(FsdLabError, ValueError):
    pass


class VocabMismatch(FsdLabError, ValueError):
    pass


class TokenOutOfRange(FsdLabError, ValueError):
    pass


class ZeroDraftProbability(FsdLabError, ValueError):
    pass


class DegenerateResidual(FsdLabError, ValueError):
    """Residual requested for identical target and draft distributions."""


class ProtocolViolation(FsdLabError, ValueError):
    """A logit-server frame was malformed or carried invalid probabilities."""


class RemoteTimeout(FsdLabError, TimeoutError):
    pass


class RemoteModelError(FsdLabError, RuntimeError):
    """The remote backend answered with an error frame."""


class EnumerationTooLarge(FsdLabError, ValueError):
    pass


class DomainMismatch(FsdLabError, ValueError):
    pass


class CorpusParseError(FsdLabError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InsufficientCorpus(FsdLabError, ValueError):
    pass


class EmptyResult(FsdLabError, ValueError):
    pass


class ConfigError(FsdLabError, ValueError):
    pass
