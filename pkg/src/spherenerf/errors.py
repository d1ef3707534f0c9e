"""Exception types shared across the package."""


class SphereNerfError(Exception):
    """Base class for all package errors."""


class AllWeightsZero(SphereNerfError):
    """Every blending weight on a ray is zero; the surface point is undefined."""


class NonPositiveRadius(SphereNerfError):
    """Sphere radius must be strictly positive."""


class DegenerateDirection(SphereNerfError):
    """A direction vector is (numerically) zero."""


class GridMismatch(SphereNerfError):
    """Two sample grids differ in size or spacing where they must agree."""


class IndexOutOfRange(SphereNerfError):
    """A sample index lies outside the grid."""


class ShapeMismatch(SphereNerfError):
    """Array arguments have incompatible shapes."""


class NonFiniteOutput(SphereNerfError):
    """A field evaluation produced NaN or Inf."""


class NonFiniteGradient(SphereNerfError):
    """A gradient computation produced NaN or Inf."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class BadConfig(SphereNerfError):
    """A configuration file or value is invalid."""


class UnknownSubcommand(SphereNerfError):
    """The CLI was invoked with an unrecognized subcommand."""
