"""Prompt generation: uniform point grids and transferred detector boxes.

Two regimes drive the segmenter: a uniform n x n grid of single-point
prompts per tile (automatic mode), or bounding boxes taken from an
external tree detector's output and re-addressed to the tile that sees
the majority of each box.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

from .errors import ConfigError, FrameError
from .geometry import BBox, Detection
from .raster import PixelWindow


@dataclass(frozen=True)
class PointPrompt:
    x: float
    y: float


@dataclass(frozen=True)
class BoxPrompt:
    bbox: BBox  # tile-local pixels
    source_score: Optional[float] = None


@dataclass(frozen=True)
class PromptSet:
    tile_index: int
    points: tuple = ()
    boxes: tuple = ()

    def __len__(self) -> int:
        return len(self.points) + len(self.boxes)


def grid_points(tile_width: int, tile_height: int, points_per_side: int) -> List[PointPrompt]:
    """Point prompts at the centers of an n x n subdivision, row-major."""
    if tile_width < 1 or tile_height < 1:
        raise ConfigError(f"tile must be non-empty, got {tile_width}x{tile_height}")
    if points_per_side < 1:
        raise ConfigError(f"points_per_side must be >= 1, got {points_per_side}")
    n = points_per_side
    return [PointPrompt(x=(i + 0.5) * tile_width / n, y=(j + 0.5) * tile_height / n)
            for j in range(n) for i in range(n)]


def boxes_from_detections(dets: Sequence[Detection], tile: PixelWindow,
                          min_score: float) -> List[BoxPrompt]:
    """Convert image-frame detector boxes into tile-local box prompts.

    A box is transferred only when it clears ``min_score`` and at least
    half of its area falls inside the tile; boxes mostly outside belong
    to a neighboring tile and would prompt the same crown twice.
    """
    tile_box = (float(tile.x0), float(tile.y0),
                float(tile.x0 + tile.width), float(tile.y0 + tile.height))
    out: List[BoxPrompt] = []
    for det in dets:
        if det.frame != "image":
            raise FrameError(f"prompt detections must be in image frame, got {det.frame!r}")
        if det.score < min_score:
            continue
        b = det.bbox
        ixmin = max(b.xmin, tile_box[0])
        iymin = max(b.ymin, tile_box[1])
        ixmax = min(b.xmax, tile_box[2])
        iymax = min(b.ymax, tile_box[3])
        if ixmax <= ixmin or iymax <= iymin:
            continue
        inter_area = (ixmax - ixmin) * (iymax - iymin)
        if inter_area < 0.5 * b.area:
            continue
        local = BBox(ixmin - tile.x0, iymin - tile.y0,
                     ixmax - tile.x0, iymax - tile.y0, frame="tile")
        out.append(BoxPrompt(bbox=local, source_score=det.score))
    return out
