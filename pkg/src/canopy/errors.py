"""Exception hierarchy shared across the pipeline.

Each class maps to one CLI exit code family (see ``canopy.cli``): config
errors exit 2, I/O errors exit 3, predictor errors exit 4, everything
else exits 5.
"""


class CanopyError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CanopyError):
    """Invalid configuration value or combination of values."""


class BoundsError(CanopyError):
    """A pixel window falls outside its parent raster."""


class TransformError(CanopyError):
    """Degenerate (non-invertible) affine geo transform."""


class FrameError(CanopyError):
    """Geometries from different coordinate frames were mixed."""


class GeometryError(CanopyError):
    """Empty or otherwise unusable geometry."""


class CodecError(CanopyError):
    """Malformed RLE mask payload."""


class RasterError(CanopyError):
    """Image file cannot be read or has an unsupported layout."""


class ParseError(CanopyError):
    """Malformed detections / ground-truth file."""


class PredictorError(CanopyError):
    """Predictor subprocess failed, timed out, or died."""


class ProtocolError(CanopyError):
    """Predictor request/response violates the wire protocol."""


class PlumbingError(CanopyError):
    """Internal wiring error (e.g. unknown tile index)."""
