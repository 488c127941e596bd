"""Exception types raised across the package."""


class G2ShapeError(ValueError):
    """Base class for all domain errors."""


class SpectrumNegative(G2ShapeError):
    pass


class NoNonnegativeHill(G2ShapeError):
    pass


class InvalidMixture(G2ShapeError):
    pass


class SupportTooWide(G2ShapeError):
    pass


class TargetInvalid(G2ShapeError):
    """A target autocorrelation is not reachable by level switching."""


class NotMonotone(TargetInvalid):
    pass


class NotConvex(TargetInvalid):
    pass


class NoBunching(TargetInvalid):
    pass


class TailNotUnity(TargetInvalid):
    pass


class ResidualTooLarge(G2ShapeError):
    pass


class EmptyArm(G2ShapeError):
    pass


class TraceTooShort(G2ShapeError):
    pass


class ConfigError(G2ShapeError):
    pass
