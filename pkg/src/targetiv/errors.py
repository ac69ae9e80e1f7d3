"""Exception types shared across the package."""


class TargetivError(Exception):
    """Base class for all package errors."""


class InvalidModel(TargetivError):
    """Model specification is internally inconsistent."""


class InvalidInput(TargetivError):
    """Caller passed data that does not satisfy an operation's contract."""


class ParseError(TargetivError):
    """A file or payload could not be parsed; carries row/field context."""


class AssumptionViolated(TargetivError):
    """A maintained assumption required by the operation does not hold."""


class WeakIdentification(TargetivError):
    """A ratio denominator is too close to zero to report the estimand."""


class RankDeficient(TargetivError):
    """A linear system required to be invertible is numerically singular."""


class DesignViolated(TargetivError):
    """Observed moments contradict a structural feature of the design."""
