"""Pixel-grid images, windowed reads, and affine pixel/world transforms.

Coordinate convention: integer ``(col, row)`` addresses the top-left
corner of a pixel, so the pixel at column ``c`` spans ``[c, c+1)`` and
its center sits at ``c + 0.5``. The affine transform maps pixel
``(col, row)`` to world ``(x, y)`` via::

    x = a*col + b*row + c
    y = d*col + e*row + f

Images are 8-bit, 1- or 3-channel, stored row-major channel-interleaved
as a read-only numpy array of shape ``(height, width, channels)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import BoundsError, RasterError, TransformError

PathLike = Union[str, Path]

# GeoTIFF tag ids
_MODEL_PIXEL_SCALE = 33550
_MODEL_TIEPOINT = 33922
_MODEL_TRANSFORMATION = 34264
_GEO_KEY_DIRECTORY = 34735
_KEY_PROJECTED_CRS = 3072
_KEY_GEOGRAPHIC_CRS = 2048


@dataclass(frozen=True)
class AffineGeoTransform:
    """Six-coefficient affine map from pixel (col,row) to world (x,y)."""

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float

    @property
    def determinant(self) -> float:
        return self.a * self.e - self.b * self.d

    def pixel_to_world(self, col: float, row: float) -> Tuple[float, float]:
        return (self.a * col + self.b * row + self.c,
                self.d * col + self.e * row + self.f)

    def world_to_pixel(self, x: float, y: float) -> Tuple[float, float]:
        det = self.determinant
        if det == 0.0:
            raise TransformError(f"geo transform is degenerate (determinant 0): {self}")
        dx = x - self.c
        dy = y - self.f
        return ((self.e * dx - self.b * dy) / det,
                (self.a * dy - self.d * dx) / det)

    def translated(self, col_off: float, row_off: float) -> "AffineGeoTransform":
        """Transform for a sub-window whose pixel (0,0) is parent (col_off,row_off)."""
        nc, nf = self.pixel_to_world(col_off, row_off)
        return replace(self, c=nc, f=nf)


def pixel_to_world(t: AffineGeoTransform, col: float, row: float) -> Tuple[float, float]:
    return t.pixel_to_world(col, row)


def world_to_pixel(t: AffineGeoTransform, x: float, y: float) -> Tuple[float, float]:
    return t.world_to_pixel(x, y)


@dataclass(frozen=True)
class PixelWindow:
    """Axis-aligned pixel rectangle, (x0,y0) top-left, inclusive-exclusive."""

    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise BoundsError(f"window must have positive size, got {self}")
        if self.x0 < 0 or self.y0 < 0:
            raise BoundsError(f"window origin must be non-negative, got {self}")


class RasterImage:
    """Immutable 8-bit image, optionally geo-referenced.

    ``data`` is normalized to a read-only ``(height, width, channels)``
    uint8 array; safe to share across worker threads.
    """

    def __init__(self, data: np.ndarray,
                 transform: Optional[AffineGeoTransform] = None,
                 crs_id: Optional[str] = None) -> None:
        arr = np.asarray(data)
        if arr.dtype != np.uint8:
            raise RasterError(f"raster samples must be 8-bit, got dtype {arr.dtype}")
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise RasterError(f"raster must be HxWx1 or HxWx3, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise RasterError(f"raster must be at least 1x1, got shape {arr.shape}")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        self.data = arr
        self.transform = transform
        self.crs_id = crs_id

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RasterImage):
            return NotImplemented
        return (np.array_equal(self.data, other.data)
                and self.transform == other.transform
                and self.crs_id == other.crs_id)


def read_window(raster: RasterImage, window: PixelWindow) -> RasterImage:
    """Extract a sub-raster; geo transform is shifted to the window origin."""
    if window.x0 + window.width > raster.width or window.y0 + window.height > raster.height:
        raise BoundsError(
            f"window {window} exceeds raster bounds {raster.width}x{raster.height}")
    data = raster.data[window.y0:window.y0 + window.height,
                       window.x0:window.x0 + window.width].copy()
    transform = None
    if raster.transform is not None:
        transform = raster.transform.translated(window.x0, window.y0)
    return RasterImage(data, transform=transform, crs_id=raster.crs_id)


def _world_file_candidates(path: Path) -> Tuple[Path, Path]:
    return path.with_suffix(".wld"), Path(str(path) + ".wld")


def read_world_file(path: PathLike) -> AffineGeoTransform:
    """Parse a 6-line world file. Line order: a, d, b, e, c, f."""
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if len(lines) != 6:
        raise RasterError(f"world file {path} must have 6 numeric lines, got {len(lines)}")
    try:
        a, d, b, e, c, f = (float(v) for v in lines)
    except ValueError as exc:
        raise RasterError(f"world file {path} has a non-numeric line: {exc}") from exc
    return AffineGeoTransform(a=a, b=b, c=c, d=d, e=e, f=f)


def _parse_geokeys_crs(directory: Tuple[int, ...]) -> Optional[str]:
    if len(directory) < 4:
        return None
    n_keys = directory[3]
    code = None
    for i in range(n_keys):
        base = 4 + 4 * i
        if base + 3 >= len(directory):
            break
        key_id, location, _count, value = directory[base:base + 4]
        if key_id in (_KEY_PROJECTED_CRS, _KEY_GEOGRAPHIC_CRS) and location == 0:
            if key_id == _KEY_PROJECTED_CRS or code is None:
                code = value
    if code is None or code in (0, 32767):
        return None
    return f"EPSG:{code}"


def _geotiff_transform(tags) -> Optional[AffineGeoTransform]:
    if _MODEL_TRANSFORMATION in tags:
        m = [float(v) for v in tags[_MODEL_TRANSFORMATION]]
        if len(m) >= 8:
            return AffineGeoTransform(a=m[0], b=m[1], c=m[3], d=m[4], e=m[5], f=m[7])
    if _MODEL_PIXEL_SCALE in tags and _MODEL_TIEPOINT in tags:
        sx, sy = (float(v) for v in tags[_MODEL_PIXEL_SCALE][:2])
        tp = [float(v) for v in tags[_MODEL_TIEPOINT][:6]]
        i, j, x, y = tp[0], tp[1], tp[3], tp[4]
        # north-up GeoTIFF: row axis points south
        a, e = sx, -sy
        return AffineGeoTransform(a=a, b=0.0, c=x - a * i, d=0.0, e=e, f=y - e * j)
    return None


def _to_uint8_array(img: Image.Image, path: Path) -> np.ndarray:
    if img.mode in ("I", "I;16", "I;16B", "F", "I;16L"):
        raise RasterError(f"{path}: only 8-bit rasters are supported, got mode {img.mode}")
    if img.mode in ("P", "RGBA", "CMYK", "YCbCr"):
        img = img.convert("RGB")
    elif img.mode == "LA":
        img = img.convert("L")
    elif img.mode == "1":
        img = img.convert("L")
    if img.mode not in ("L", "RGB"):
        raise RasterError(f"{path}: unsupported image mode {img.mode}")
    return np.asarray(img, dtype=np.uint8)


def load_raster(path: PathLike) -> RasterImage:
    """Load a PNG or (Geo)TIFF image plus any sidecar world file.

    A sidecar world file (``scene.wld`` or ``scene.png.wld``) takes
    precedence over geo tags embedded in a TIFF.
    """
    path = Path(path)
    try:
        img = Image.open(path)
    except FileNotFoundError as exc:
        raise RasterError(f"cannot read image: {path}: file not found") from exc
    except UnidentifiedImageError as exc:
        raise RasterError(f"cannot read image: {path}: unrecognized format") from exc
    with img:
        transform = None
        crs_id = None
        if img.format == "TIFF":
            tags = img.tag_v2
            transform = _geotiff_transform(tags)
            if _GEO_KEY_DIRECTORY in tags:
                crs_id = _parse_geokeys_crs(tuple(tags[_GEO_KEY_DIRECTORY]))
        data = _to_uint8_array(img, path)
    for candidate in _world_file_candidates(path):
        if candidate.exists():
            transform = read_world_file(candidate)
            break
    return RasterImage(data, transform=transform, crs_id=crs_id)


def save_png(raster: RasterImage, path: PathLike) -> None:
    arr = raster.data
    if arr.shape[2] == 1:
        img = Image.fromarray(arr[:, :, 0], mode="L")
    else:
        img = Image.fromarray(arr, mode="RGB")
    img.save(Path(path), format="PNG")
