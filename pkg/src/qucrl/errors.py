"""Exception hierarchy shared by every qucrl module."""


class QucrlError(Exception):
    """Base class for all library errors."""


class InvalidParams(QucrlError, ValueError):
    pass


class NonErgodicChain(QucrlError):
    """The chain induced by a policy has more than one recurrent class."""


class SingularSystem(QucrlError):
    pass


class TooLargeToEnumerate(QucrlError):
    pass


class InvalidHorizon(QucrlError, ValueError):
    pass


class DoubleConsumption(QucrlError):
    """A quantum sample was measured more than once."""


class MixedKeys(QucrlError, ValueError):
    pass


class StaleBuffer(QucrlError):
    pass


class InvalidRadius(QucrlError, ValueError):
    pass


class Infeasible(QucrlError):
    pass


class NumericalFailure(QucrlError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class MismatchedHorizon(QucrlError, ValueError):
    pass


class DegenerateWindow(QucrlError, ValueError):
    pass


class ConfigError(QucrlError, ValueError):
    pass


class IoFailure(QucrlError, OSError):
    pass
