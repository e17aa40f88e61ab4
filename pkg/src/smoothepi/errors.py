"""Exception hierarchy shared across the pipeline stages."""


class SmoothEpiError(Exception):
    """Base class for all pipeline errors."""


class ValidationError(SmoothEpiError):
    """Bad input parameters or malformed data."""


class FormatError(SmoothEpiError):
    """Unsupported or corrupt raster file."""


class OutOfBoundsError(SmoothEpiError):
    """Subpixel sample requested outside the image rectangle."""


class DegenerateGradientError(SmoothEpiError):
    """Curvature requested at or near a critical point of the intensity field."""


class UninformativeCurveError(SmoothEpiError):
    """Curve signature has too little variance to correlate."""


class ParallaxDeficientError(SmoothEpiError):
    """Correspondences come from fewer bodies than needed for parallax."""


class InsufficientDataError(SmoothEpiError):
    """Too few correspondences for the requested estimate."""


class DegenerateConfigurationError(SmoothEpiError):
    """Point configuration leaves the linear system rank-deficient."""


class HorizonError(SmoothEpiError):
    """Homography maps a curve point to the plane at infinity."""


class InvalidEpipoleError(SmoothEpiError):
    """Zero or otherwise unusable epipole vector."""


class DegenerateLineError(SmoothEpiError):
    """Epipolar line with zero direction for some correspondence."""

    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"degenerate epipolar line at index {index}")


class InfeasiblePartitionError(SmoothEpiError):
    """No outer-ring radius satisfies the resolution bound."""


class PartitionConstructionError(SmoothEpiError):
    """Root finding failed while building a partition ring."""

    def __init__(self, ring, message=None):
        self.ring = ring
        super().__init__(message or f"partition construction failed at ring {ring}")


class FanDegenerateError(SmoothEpiError):
    """Epipole inside the source body: the epipolar-line fan is ill-defined."""


class NoEvidenceError(SmoothEpiError):
    """No tangency observations survived the guard filter."""


class ConsensusFailureError(SmoothEpiError):
    """RANSAC never reached the minimum consensus size."""


class InsufficientTangencyError(SmoothEpiError):
    """Fewer than two outline tangents available."""


class InvalidCameraError(SmoothEpiError):
    """Camera placed inside a body or coincident camera centers."""


class VisibilityError(SmoothEpiError):
    """Not enough co-visible surface points to sample."""


class StageError(SmoothEpiError):
    """Pipeline stage failure, carrying the stage name and a machine code."""

    def __init__(self, stage, code, message=None):
        self.stage = stage
        self.code = code
        super().__init__(message or f"stage '{stage}' failed with code '{code}'")
