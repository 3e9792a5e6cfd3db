"""Exception types used across the library."""


class RieszLabError(Exception):
    pass


class ParameterError(RieszLabError):
    """Invalid parameter (out-of-range exponent, bad step, ...)."""


class SingularityError(RieszLabError):
    """Evaluation requested at (or too close to) a kernel singularity."""


class ResolutionError(RieszLabError):
    """Grid/node count below the minimum needed for the declared tolerance."""


class ToleranceError(RieszLabError):
    """A quadrature failed to converge to the requested tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class CapabilityError(RieszLabError):
    """Requested derivative order or feature beyond what the object declares."""


class CollisionError(RieszLabError):
    """Particle flow aborted: minimum gap fell below the guard threshold."""

    def __init__(self, message, time=None, min_gap=None, pair=None):
        super().__init__(message)
        self.time = time
        self.min_gap = min_gap
        self.pair = pair


class SchemaError(RieszLabError):
    """Experiment spec failed validation."""
