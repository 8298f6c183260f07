"""Exception hierarchy shared by every module of the package."""


class KoppelmanError(Exception):
    """Base class for all errors raised by this package."""


class DivisionByZero(KoppelmanError, ZeroDivisionError):
    """An expression was evaluated on the singular set of one of its denominators."""


class UnboundVariable(KoppelmanError, KeyError):
    """An expression references a variable that the evaluation point does not assign."""


class ParseError(KoppelmanError, ValueError):
    pass


class AmbientMismatch(KoppelmanError, ValueError):
    pass


class RankExceeded(KoppelmanError, ValueError):
    pass


class SupportFunctionInvalid(KoppelmanError, ValueError):
    pass


class WeightAxiomViolation(KoppelmanError, ValueError):
    pass


class ChernInconsistent(KoppelmanError, ValueError):
    pass


class DualityRequired(KoppelmanError, ValueError):
    """The weight exponent would be negative; use the dual pairing instead."""


class DegreeOutOfRange(KoppelmanError, ValueError):
    pass


class DegreeMismatch(KoppelmanError, ValueError):
    pass


class SingularityUnhandled(KoppelmanError, ValueError):
    pass


class TwistMismatch(KoppelmanError, ValueError):
    pass


class NotClosed(KoppelmanError, ValueError):
    pass


class CaseMismatch(KoppelmanError, ValueError):
    pass


class DomainError(KoppelmanError, ValueError):
    """Evaluation point or parameters incompatible with the integration domain."""
