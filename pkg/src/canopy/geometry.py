"""Masks, polygons, boxes, IOU, and non-maximum suppression.

Binary masks are boolean numpy arrays of shape ``(height, width)``.
Polygons are stored in normalized form: counter-clockwise (positive
shoelace signed area in the stored frame), no repeated consecutive
vertices, vertex list rotated to start at the smallest ``(y, x)``
vertex, so equal shapes compare equal.

Every geometry carries a coordinate frame tag ("tile", "image" or
"world"); operations that combine two geometries refuse mixed frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclasses_field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from shapely.geometry import Polygon as ShapelyPolygon
from shapely.validation import make_valid

from .errors import ConfigError, FrameError, GeometryError

FRAMES = ("tile", "image", "world")
SOURCES = ("automatic-grid", "bbox-prompted", "external-detector")

_EIGHT_CONNECTED = np.ones((3, 3), dtype=np.uint8)
_HULL_TOLERANCE = 1e-9


def _as_mask(mask: np.ndarray) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise GeometryError(f"mask must be 2-D, got shape {arr.shape}")
    return arr.astype(bool, copy=False)


def _check_frame(frame: str) -> str:
    if frame not in FRAMES:
        raise FrameError(f"unknown coordinate frame {frame!r}, expected one of {FRAMES}")
    return frame


def signed_area(vertices: Sequence[Tuple[float, float]]) -> float:
    """Shoelace signed area; positive for counter-clockwise vertex order."""
    total = 0.0
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        total += x0 * y1 - x1 * y0
    return total / 2.0


@dataclass(frozen=True)
class BBox:
    xmin: float
    ymin: float
    xmax: float
    ymax: float
    frame: str = "image"

    def __post_init__(self) -> None:
        _check_frame(self.frame)
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise GeometryError(f"degenerate bbox: {self}")

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    def translated(self, dx: float, dy: float) -> "BBox":
        return BBox(self.xmin + dx, self.ymin + dy, self.xmax + dx, self.ymax + dy,
                    frame=self.frame)

    def intersection_area(self, other: "BBox") -> float:
        w = min(self.xmax, other.xmax) - max(self.xmin, other.xmin)
        h = min(self.ymax, other.ymax) - max(self.ymin, other.ymin)
        if w <= 0.0 or h <= 0.0:
            return 0.0
        return w * h


class Polygon:
    """Simple polygon with implicit closure, normalized on construction."""

    __slots__ = ("vertices", "frame", "_shapely")

    def __init__(self, vertices: Iterable[Tuple[float, float]], frame: str = "image") -> None:
        _check_frame(frame)
        pts = [(float(x), float(y)) for x, y in vertices]
        if len(pts) > 1 and pts[0] == pts[-1]:
            pts = pts[:-1]
        deduped: List[Tuple[float, float]] = []
        for p in pts:
            if not deduped or p != deduped[-1]:
                deduped.append(p)
        if len(deduped) < 3:
            raise GeometryError(f"polygon needs >= 3 distinct vertices, got {len(deduped)}")
        area2 = signed_area(deduped)
        if area2 == 0.0:
            raise GeometryError("polygon has zero area")
        if area2 < 0.0:
            deduped.reverse()
        start = min(range(len(deduped)), key=lambda i: (deduped[i][1], deduped[i][0]))
        object.__setattr__(self, "vertices", tuple(deduped[start:] + deduped[:start]))
        object.__setattr__(self, "frame", frame)
        object.__setattr__(self, "_shapely", None)

    def __setattr__(self, name, value):  # immutable after construction
        raise AttributeError("Polygon is immutable")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Polygon):
            return NotImplemented
        return self.vertices == other.vertices and self.frame == other.frame

    def __hash__(self) -> int:
        return hash((self.vertices, self.frame))

    def __repr__(self) -> str:
        return f"Polygon({len(self.vertices)} vertices, frame={self.frame!r})"

    @property
    def area(self) -> float:
        return signed_area(self.vertices)

    def bbox(self) -> BBox:
        xs = [v[0] for v in self.vertices]
        ys = [v[1] for v in self.vertices]
        return BBox(min(xs), min(ys), max(xs), max(ys), frame=self.frame)

    def translated(self, dx: float, dy: float, frame: Optional[str] = None) -> "Polygon":
        return Polygon([(x + dx, y + dy) for x, y in self.vertices],
                       frame=frame if frame is not None else self.frame)

    def transformed(self, fn, frame: str) -> "Polygon":
        """Map every vertex through ``fn(x, y) -> (x', y')``."""
        return Polygon([fn(x, y) for x, y in self.vertices], frame=frame)

    def as_shapely(self):
        """Shapely geometry for clipping; repaired if the ring self-touches.

        Mask tracing can emit weakly-simple rings (a vertex visited twice
        where a component connects diagonally); ``make_valid`` splits
        those without changing the covered area.
        """
        cached = self._shapely
        if cached is None:
            geom = ShapelyPolygon(self.vertices)
            if not geom.is_valid:
                geom = make_valid(geom)
            object.__setattr__(self, "_shapely", geom)
            cached = geom
        return cached


@dataclass(frozen=True)
class Detection:
    """Scored geometry: a polygon plus its axis-aligned hull.

    ``extras`` holds unknown properties carried through file round
    trips; it never participates in comparisons or ordering.
    """

    polygon: Polygon
    bbox: BBox
    score: float
    source: str
    tile_index: Optional[int] = None
    extras: Optional[dict] = dataclasses_field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0):
            raise GeometryError(f"detection score must be in [0,1], got {self.score}")
        if self.source not in SOURCES:
            raise GeometryError(f"unknown detection source {self.source!r}")
        if self.bbox.frame != self.polygon.frame:
            raise FrameError(f"detection bbox frame {self.bbox.frame!r} != "
                             f"polygon frame {self.polygon.frame!r}")
        hull = self.polygon.bbox()
        for got, want in ((self.bbox.xmin, hull.xmin), (self.bbox.ymin, hull.ymin),
                          (self.bbox.xmax, hull.xmax), (self.bbox.ymax, hull.ymax)):
            if abs(got - want) > _HULL_TOLERANCE:
                raise GeometryError(
                    f"detection bbox {self.bbox} is not the polygon hull {hull}")

    @classmethod
    def from_polygon(cls, polygon: Polygon, score: float, source: str,
                     tile_index: Optional[int] = None) -> "Detection":
        return cls(polygon=polygon, bbox=polygon.bbox(), score=score,
                   source=source, tile_index=tile_index)

    @property
    def frame(self) -> str:
        return self.polygon.frame

    def translated(self, dx: float, dy: float, frame: Optional[str] = None) -> "Detection":
        poly = self.polygon.translated(dx, dy, frame=frame)
        return Detection(polygon=poly, bbox=poly.bbox(), score=self.score,
                         source=self.source, tile_index=self.tile_index,
                         extras=self.extras)

    def sort_key(self) -> tuple:
        """Total order used by NMS, matching, and canonical output."""
        return (-self.score, -self.polygon.area, self.polygon.vertices)


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Keep only the largest 8-connected foreground component.

    Size ties go to the component whose first pixel comes earliest in
    row-major order. All-background input is returned as-is (a copy).
    """
    mask = _as_mask(mask)
    labels, count = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    if count == 0:
        return np.zeros_like(mask)
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    best = sizes.max()
    candidates = np.flatnonzero(sizes == best)
    if len(candidates) == 1:
        keep = candidates[0]
    else:
        flat = labels.ravel()
        keep = min(candidates, key=lambda lab: int(np.argmax(flat == lab)))
    return labels == keep


# Crack-following tables: ahead-left / ahead-right cell offsets per direction.
# Walking keeps foreground on the left; at diagonal (checkerboard) corners the
# right-turn rule joins the two cells, matching 8-connected components.
_ROT_RIGHT = {(1, 0): (0, -1), (0, -1): (-1, 0), (-1, 0): (0, 1), (0, 1): (1, 0)}
_ROT_LEFT = {(1, 0): (0, 1), (0, 1): (-1, 0), (-1, 0): (0, -1), (0, -1): (1, 0)}


def mask_to_polygon(mask: np.ndarray, frame: str = "tile") -> Polygon:
    """Trace the outer boundary of a mask's component along pixel edges.

    Vertices land on integer grid corners, collinear runs are merged and
    interior holes are ignored. The mask is expected to hold a single
    component (run ``largest_component`` first); with multiple present,
    the component containing the first row-major foreground pixel is
    traced.
    """
    mask = _as_mask(mask)
    fg = np.argwhere(mask)
    if fg.size == 0:
        raise GeometryError("cannot trace an empty mask")
    h, w = mask.shape

    def cell(cx: int, cy: int) -> bool:
        return 0 <= cx < w and 0 <= cy < h and bool(mask[cy, cx])

    r0, c0 = int(fg[0][0]), int(fg[0][1])
    start = (c0, r0)
    verts: List[Tuple[int, int]] = [start]
    px, py = start
    dx, dy = 1, 0
    while True:
        qx, qy = px + dx, py + dy
        if (qx, qy) == start:
            break
        if dx == 1:
            fl, fr = cell(qx, qy), cell(qx, qy - 1)
        elif dy == 1:
            fl, fr = cell(qx - 1, qy), cell(qx, qy)
        elif dx == -1:
            fl, fr = cell(qx - 1, qy - 1), cell(qx - 1, qy)
        else:
            fl, fr = cell(qx, qy - 1), cell(qx - 1, qy - 1)
        if fr:
            ndx, ndy = _ROT_RIGHT[(dx, dy)]
        elif fl:
            ndx, ndy = dx, dy
        else:
            ndx, ndy = _ROT_LEFT[(dx, dy)]
        if (ndx, ndy) != (dx, dy):
            verts.append((qx, qy))
        px, py, dx, dy = qx, qy, ndx, ndy
    return Polygon([(float(x), float(y)) for x, y in verts], frame=frame)


def bbox_from_mask(mask: np.ndarray, frame: str = "tile") -> BBox:
    """Tight hull of foreground pixels; pixel at col c spans [c, c+1)."""
    mask = _as_mask(mask)
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise GeometryError("cannot bound an empty mask")
    return BBox(float(cols.min()), float(rows.min()),
                float(cols.max() + 1), float(rows.max() + 1), frame=frame)


def polygon_area(p: Polygon) -> float:
    return p.area


def polygon_iou(p: Polygon, q: Polygon) -> float:
    """Intersection-over-union of two polygons via polygon clipping."""
    if p.frame != q.frame:
        raise FrameError(f"cannot compare polygons across frames: {p.frame} vs {q.frame}")
    if p.vertices == q.vertices:
        return 1.0
    sp, sq = p.as_shapely(), q.as_shapely()
    inter = sp.intersection(sq).area
    if inter == 0.0:
        return 0.0
    union = sp.area + sq.area - inter
    return min(max(inter / union, 0.0), 1.0)


def bbox_iou(a: BBox, b: BBox) -> float:
    if a.frame != b.frame:
        raise FrameError(f"cannot compare boxes across frames: {a.frame} vs {b.frame}")
    inter = a.intersection_area(b)
    if inter == 0.0:
        return 0.0
    union = a.area + b.area - inter
    return min(max(inter / union, 0.0), 1.0)


def nms(dets: Sequence[Detection], iou_threshold: float, mode: str = "polygon") -> List[Detection]:
    """Greedy non-maximum suppression over polygons or their boxes.

    Candidates are visited by descending score (ties: larger area first,
    then canonical vertex order) and kept unless their IOU with an
    already-kept detection strictly exceeds the threshold. Kept order is
    the visiting order, so output is deterministic under input
    permutation.
    """
    if mode not in ("polygon", "bbox"):
        raise ConfigError(f"nms mode must be 'polygon' or 'bbox', got {mode!r}")
    if not (0.0 <= iou_threshold <= 1.0):
        raise ConfigError(f"iou_threshold must be in [0,1], got {iou_threshold}")
    if not dets:
        return []
    frames = {d.frame for d in dets}
    if len(frames) > 1:
        raise FrameError(f"nms input mixes frames: {sorted(frames)}")
    ordered = sorted(dets, key=Detection.sort_key)
    kept: List[Detection] = []
    for det in ordered:
        suppressed = False
        for other in kept:
            if mode == "polygon":
                iou = polygon_iou(det.polygon, other.polygon)
            else:
                iou = bbox_iou(det.bbox, other.bbox)
            if iou > iou_threshold:
                suppressed = True
                break
        if not suppressed:
            kept.append(det)
    return kept
