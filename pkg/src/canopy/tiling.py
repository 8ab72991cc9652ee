"""Overlapping crop planning for running a segmenter on large rasters.

Windows step by ``tile_size - overlap`` along each axis and the final
window is clamped to the image edge rather than padded, so no synthetic
pixels ever reach the predictor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

from .errors import ConfigError
from .raster import PixelWindow


@dataclass(frozen=True)
class TilingPlan:
    tile_size: int
    overlap: int
    windows: Tuple[PixelWindow, ...]

    def __len__(self) -> int:
        return len(self.windows)

    def to_json_value(self) -> dict:
        return {
            "tile_size": self.tile_size,
            "overlap": self.overlap,
            "windows": [[w.x0, w.y0, w.width, w.height] for w in self.windows],
        }


def _axis_positions(extent: int, tile_size: int, stride: int) -> List[int]:
    if extent <= tile_size:
        return [0]
    positions = []
    pos = 0
    while pos + tile_size < extent:
        positions.append(pos)
        pos += stride
    if not positions or positions[-1] + tile_size != extent:
        positions.append(extent - tile_size)
    return positions


def plan_tiles(width: int, height: int, tile_size: int, overlap: int) -> TilingPlan:
    """Plan windows covering a ``width`` x ``height`` image, row-major by (y0, x0).

    Per axis the window size is ``min(tile_size, extent)``; when the
    image is larger than the tile, positions run 0, s, 2s, ... with
    stride ``s = tile_size - overlap``, plus a final position clamped to
    the image edge.
    """
    if tile_size < 1:
        raise ConfigError(f"tile_size must be >= 1, got {tile_size}")
    if overlap < 0 or overlap >= tile_size:
        raise ConfigError(f"overlap must satisfy 0 <= overlap < tile_size, "
                          f"got overlap={overlap} tile_size={tile_size}")
    if width < 1 or height < 1:
        raise ConfigError(f"image extent must be positive, got {width}x{height}")
    stride = tile_size - overlap
    xs = _axis_positions(width, tile_size, stride)
    ys = _axis_positions(height, tile_size, stride)
    w = min(tile_size, width)
    h = min(tile_size, height)
    windows = tuple(PixelWindow(x0=x, y0=y, width=w, height=h) for y in ys for x in xs)
    return TilingPlan(tile_size=tile_size, overlap=overlap, windows=windows)
