"""Exception and warning types raised across the package."""


class RiemCtlError(Exception):
    """Base class for all package errors."""


class OutsideTubularNeighborhood(RiemCtlError):
    """Nearest-point projection requested outside the tubular neighborhood."""


class CutLocus(RiemCtlError):
    """The minimizing geodesic between two points is not unique."""


class NonTangentField(RiemCtlError):
    """A user-supplied vector field returned a non-tangent vector."""


class EnumerationTooLarge(RiemCtlError):
    pass


class StepTooLarge(RiemCtlError):
    """Semi-Lagrangian characteristic feet would leave the safe radius."""


class DegenerateStencil(RiemCtlError):
    pass


class ConjugatePoint(RiemCtlError):
    pass


class ConfigError(RiemCtlError):
    pass


class BeyondInjectivityRadius(UserWarning):
    """Exponential map evaluated with a vector longer than the injectivity radius."""
