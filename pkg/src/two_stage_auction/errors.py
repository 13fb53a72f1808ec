"""Exception hierarchy.  The CLI maps these onto exit codes."""


class AuctionError(Exception):
    """Base class for all package errors."""


class ConfigError(AuctionError, ValueError):
    """Invalid configuration, descriptor or parameter (exit code 2)."""


class NumericalFault(AuctionError, ArithmeticError):
    """A numerical procedure failed where theory says it should not (exit code 3)."""


class DegenerateTruncation(NumericalFault):
    pass


class NoRootFound(NumericalFault):
    pass


class SingularInput(NumericalFault):
    pass


class SingularityBreach(NumericalFault):
    pass


class SupportBreach(NumericalFault):
    pass


class InvalidCutoff(ConfigError):
    pass


class NotSufficientlyStronger(ConfigError):
    """The entrant's mean value does not exceed the first-stage support maximum."""


class StrategyModeMismatch(ConfigError):
    pass


class OutOfRange(AuctionError, ValueError):
    pass
