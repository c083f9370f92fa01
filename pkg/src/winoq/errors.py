"""Exception hierarchy shared by every winoq module."""


class WinoqError(Exception):
    """Base class for all library errors."""


class InvalidShape(WinoqError, ValueError):
    pass


class FormatError(WinoqError, ValueError):
    pass


class ComputeError(WinoqError, ArithmeticError):
    """Non-finite values reached a compute entrypoint."""


class SingularTransform(WinoqError, ValueError):
    pass


class InvalidScale(WinoqError, ValueError):
    pass


class InvalidSpec(WinoqError, ValueError):
    pass


class UndefinedMetric(WinoqError, ArithmeticError):
    pass


class TuneDiverged(WinoqError, RuntimeError):
    """Raised when the tuning loss becomes non-finite.

    ``last_good`` holds the scale set from the last finite step.
    """

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good
