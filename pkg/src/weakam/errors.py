"""Exception hierarchy shared by all weakam modules."""


class WeakKamError(Exception):
    """Base class for every error raised by weakam."""


class ConfigError(WeakKamError):
    """Invalid user input: bad config file, unknown preset, parameter out of range."""


class UnknownPreset(ConfigError):
    pass


class ParamOutOfRange(ConfigError, ValueError):
    pass


class NonPositiveDelta(ConfigError, ValueError):
    pass


class NonConvexDetected(WeakKamError, ValueError):
    pass


class GridTooCoarse(ConfigError, ValueError):
    pass


class ModelMismatch(WeakKamError, ValueError):
    pass


class NumericalFailure(WeakKamError):
    """A computation could not produce a trustworthy result."""


class NotDissipative(NumericalFailure):
    pass


class NotCritical(NumericalFailure):
    pass


class NoConvergence(NumericalFailure):
    pass


class NotConverged(NumericalFailure):
    pass


class NonFinite(NumericalFailure):
    pass


class NotSubsolution(NumericalFailure):
    pass
