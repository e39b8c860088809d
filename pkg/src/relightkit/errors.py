"""Exception and warning types shared across the engine."""


class RelightError(Exception):
    """Base class for errors caused by invalid inputs or inconsistent state."""


class OutOfRange(RelightError):
    """A scalar parameter lies outside its documented domain."""


class TooShort(RelightError):
    """A requested embedding length cannot hold the encoding."""


class InvalidGeometry(RelightError):
    """Stage or panel dimensions are non-positive or inconsistent."""


class NonOrthonormal(RelightError):
    """A matrix expected to be a rotation fails the orthonormality check."""


class IndexOutOfRange(RelightError):
    """A texel or frame index is outside the raster."""


class EmptyRegion(RelightError):
    """A panel's spherical region captured no texels at this resolution."""


class SizeMismatch(RelightError):
    """Stack size and weight count (or image dimensions) disagree."""


class ShapeMismatch(RelightError):
    """Array shapes that must agree do not."""


class StepOutOfRange(RelightError):
    """A diffusion timestep is outside [1, T]."""


class InvalidParams(RelightError):
    """Noise or schedule parameters are outside their valid range."""


class InvalidPlan(RelightError):
    """Segment planning constraints (K vs frame count) are violated."""


class Misaligned(RelightError):
    """Per-splat offsets do not align one-to-one with splats."""


class SingularCovariance(RelightError):
    """A projected 2x2 covariance is not invertible within conditioning bounds."""


class ChartMismatch(RelightError):
    """Reference and observed color charts have different patch counts."""


class DegenerateChart(RelightError):
    """A chart channel carries no energy; the scale factor is undefined."""


class MalformedHeader(RelightError):
    """A PFM header is not parseable."""


class TruncatedPayload(RelightError):
    """A PFM payload ends before the declared raster is complete."""


class UnsupportedChannelCount(RelightError):
    """Only 3-channel color PFM rasters are supported."""


class NonConvergenceWarning(UserWarning):
    """A fit stopped at max iterations; the best-so-far result is returned."""
