"""Exception hierarchy shared by all levcool modules."""


class LevcoolError(Exception):
    """Base class for every error raised by this package."""


class InvalidParams(LevcoolError, ValueError):
    pass


class UnstableSystem(LevcoolError):
    """Total damping is non-positive, or a simulated trajectory ran away."""


class DivisionByZeroNoise(LevcoolError, ZeroDivisionError):
    pass


class HeatingDelay(LevcoolError):
    """The delay puts the loop in the heating quadrant (sin(Omega*tau) <= 0)."""


class ConfigRejected(LevcoolError, ValueError):
    pass


class NoConvergence(LevcoolError):
    pass


class SingularJacobian(LevcoolError):
    pass


class TooShort(LevcoolError, ValueError):
    pass


class BandOutOfRange(LevcoolError, ValueError):
    pass


class NoPeak(LevcoolError):
    pass


class UnderResolved(LevcoolError):
    pass


class InsufficientSpan(LevcoolError, ValueError):
    pass


class StreamMismatch(LevcoolError):
    pass


class ConfigError(LevcoolError, ValueError):
    pass


class ManifestMissing(LevcoolError):
    pass
