"""Bit-exact reading and writing of detection sets and ground truth.

Detections are stored as a GeoJSON FeatureCollection with one Polygon
feature per detection and a top-level foreign ``provenance`` member.
The same schema serves both frames: world coordinates when a CRS is
recorded, image-pixel coordinates otherwise, tagged explicitly by the
``frame`` member. Serialization is canonical (fixed key order, features
sorted, reals at 9 significant digits) so identical sets produce
byte-identical files.

A DeepForest-style CSV (``image_id,xmin,ymin,xmax,ymax,score``) is
accepted as an alternative detections input, mainly for transferring
detector boxes as prompts.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from . import canonical
from .errors import ConfigError, ParseError
from .geometry import BBox, Detection, Polygon
from .raster import AffineGeoTransform

PathLike = Union[str, Path]

_KNOWN_PROPERTIES = ("score", "source", "bbox", "image_id")


@dataclass
class DetectionSet:
    """One image's detections in a single coordinate frame."""

    image_id: str
    detections: Tuple[Detection, ...]
    frame: str = "image"
    crs_id: Optional[str] = None
    provenance: dict = field(default_factory=dict)
    geo_transform: Optional[AffineGeoTransform] = None

    def __post_init__(self) -> None:
        for det in self.detections:
            if det.frame != self.frame:
                raise ConfigError(f"detection frame {det.frame!r} does not match "
                                  f"set frame {self.frame!r}")

    def to_world(self) -> "DetectionSet":
        """Lift pixel-frame detections into the world frame."""
        if self.geo_transform is None:
            raise ConfigError("detection set has no geo transform to lift with")
        if self.frame == "world":
            return self
        lifted = []
        for det in self.detections:
            poly = det.polygon.transformed(self.geo_transform.pixel_to_world, frame="world")
            lifted.append(Detection(polygon=poly, bbox=poly.bbox(), score=det.score,
                                    source=det.source, tile_index=det.tile_index,
                                    extras=det.extras))
        return DetectionSet(image_id=self.image_id, detections=tuple(lifted),
                            frame="world", crs_id=self.crs_id,
                            provenance=self.provenance, geo_transform=self.geo_transform)


def _feature_sort_key(det: Detection) -> tuple:
    b = det.bbox
    return (-det.score, b.xmin, b.ymin, b.xmax, b.ymax, det.polygon.vertices)


def _closed_ring(polygon: Polygon) -> List[List[float]]:
    ring = [[float(x), float(y)] for x, y in polygon.vertices]
    ring.append(ring[0])
    return ring


def grouped_to_json_value(grouped: Dict[str, List[Detection]], frame: str,
                          crs_id: Optional[str], provenance: dict) -> dict:
    features = []
    for image_id in sorted(grouped):
        for det in sorted(grouped[image_id], key=_feature_sort_key):
            properties = {
                "score": float(det.score),
                "source": det.source,
                "bbox": [det.bbox.xmin, det.bbox.ymin, det.bbox.xmax, det.bbox.ymax],
                "image_id": image_id,
            }
            if det.extras:
                for key in sorted(det.extras):
                    properties[key] = det.extras[key]
            features.append({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [_closed_ring(det.polygon)]},
                "properties": properties,
            })
    doc: dict = {"type": "FeatureCollection", "frame": frame}
    if crs_id is not None:
        doc["crs_id"] = crs_id
    doc["provenance"] = provenance
    doc["features"] = features
    return doc


def detections_to_json_value(dset: DetectionSet) -> dict:
    return grouped_to_json_value({dset.image_id: list(dset.detections)},
                                 dset.frame, dset.crs_id, dset.provenance)


def write_detections(dset: DetectionSet, path: PathLike) -> None:
    text = canonical.dumps(detections_to_json_value(dset)) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def write_detections_grouped(grouped: Dict[str, List[Detection]], path: PathLike, *,
                             frame: str = "image", crs_id: Optional[str] = None,
                             provenance: Optional[dict] = None) -> None:
    doc = grouped_to_json_value(grouped, frame, crs_id, provenance or {})
    Path(path).write_text(canonical.dumps(doc) + "\n", encoding="utf-8")


def _load_json(path: Path) -> dict:
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ParseError(f"cannot read detections file: {path}: file not found") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: malformed JSON at byte offset {exc.pos}: {exc.msg}") from exc


def _feature_to_detection(feat: dict, index: int, frame: str, path: Path) -> Tuple[str, Detection]:
    def fail(msg: str) -> ParseError:
        return ParseError(f"{path}: feature {index}: {msg}")

    if not isinstance(feat, dict) or feat.get("type") != "Feature":
        raise fail("not a GeoJSON Feature")
    geometry = feat.get("geometry")
    if not isinstance(geometry, dict) or geometry.get("type") != "Polygon":
        raise fail(f"geometry must be a Polygon, got "
                   f"{geometry.get('type') if isinstance(geometry, dict) else geometry!r}")
    rings = geometry.get("coordinates")
    if not isinstance(rings, list) or not rings or not isinstance(rings[0], list):
        raise fail("Polygon geometry has no coordinate ring")
    try:
        vertices = [(float(p[0]), float(p[1])) for p in rings[0]]
        polygon = Polygon(vertices, frame=frame)
    except Exception as exc:
        raise fail(f"bad ring: {exc}") from exc
    properties = feat.get("properties") or {}
    if not isinstance(properties, dict):
        raise fail("properties must be an object")
    try:
        score = float(properties["score"])
        image_id = str(properties["image_id"])
    except (KeyError, TypeError, ValueError) as exc:
        raise fail(f"missing or bad property: {exc}") from exc
    source = str(properties.get("source", "external-detector"))
    raw_bbox = properties.get("bbox")
    if raw_bbox is not None:
        try:
            bbox = BBox(*(float(v) for v in raw_bbox), frame=frame)
        except Exception as exc:
            raise fail(f"bad bbox property: {exc}") from exc
    else:
        bbox = polygon.bbox()
    extras = {k: v for k, v in properties.items() if k not in _KNOWN_PROPERTIES}
    try:
        det = Detection(polygon=polygon, bbox=bbox, score=score, source=source,
                        extras=extras or None)
    except Exception as exc:
        raise fail(str(exc)) from exc
    return image_id, det


def _read_grouped(path: Path) -> Tuple[Dict[str, List[Detection]], str, Optional[str], dict]:
    doc = _load_json(path)
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise ParseError(f"{path}: not a GeoJSON FeatureCollection")
    crs_id = doc.get("crs_id")
    frame = doc.get("frame") or ("world" if crs_id else "image")
    if frame not in ("image", "world"):
        raise ParseError(f"{path}: unknown frame tag {frame!r}")
    provenance = doc.get("provenance") or {}
    features = doc.get("features")
    if not isinstance(features, list):
        raise ParseError(f"{path}: features member must be a list")
    grouped: Dict[str, List[Detection]] = {}
    for i, feat in enumerate(features):
        image_id, det = _feature_to_detection(feat, i, frame, path)
        grouped.setdefault(image_id, []).append(det)
    return grouped, frame, crs_id, provenance


def read_detections(path: PathLike) -> DetectionSet:
    """Read a single-image detections file (inverse of ``write_detections``)."""
    path = Path(path)
    grouped, frame, crs_id, provenance = _read_grouped(path)
    if len(grouped) > 1:
        raise ParseError(f"{path}: file holds {len(grouped)} image ids; "
                         f"expected one (use the grouped reader for multi-image files)")
    image_id = next(iter(grouped)) if grouped else ""
    detections = tuple(grouped.get(image_id, ()))
    return DetectionSet(image_id=image_id, detections=detections, frame=frame,
                        crs_id=crs_id, provenance=provenance)


def read_detections_grouped(path: PathLike) -> Dict[str, DetectionSet]:
    """Read a detections file that may mix several image ids."""
    path = Path(path)
    grouped, frame, crs_id, provenance = _read_grouped(path)
    return {
        image_id: DetectionSet(image_id=image_id, detections=tuple(dets), frame=frame,
                               crs_id=crs_id, provenance=provenance)
        for image_id, dets in grouped.items()
    }


# ---------------------------------------------------------------------------
# CSV (DeepForest-style)
# ---------------------------------------------------------------------------

def _rect_polygon(b: BBox) -> Polygon:
    return Polygon([(b.xmin, b.ymin), (b.xmax, b.ymin), (b.xmax, b.ymax), (b.xmin, b.ymax)],
                   frame=b.frame)


def read_csv_detections(path: PathLike) -> Dict[str, List[Detection]]:
    """Read ``image_id,xmin,ymin,xmax,ymax,score`` rows, grouped by image."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError as exc:
        raise ParseError(f"cannot read detections file: {path}: file not found") from exc
    reader = csv.DictReader(lines)
    required = {"image_id", "xmin", "ymin", "xmax", "ymax", "score"}
    if reader.fieldnames is None or not required.issubset(reader.fieldnames):
        raise ParseError(f"{path}: CSV header must contain {sorted(required)}, "
                         f"got {reader.fieldnames}")
    grouped: Dict[str, List[Detection]] = {}
    for row_no, row in enumerate(reader, start=2):
        try:
            bbox = BBox(float(row["xmin"]), float(row["ymin"]),
                        float(row["xmax"]), float(row["ymax"]), frame="image")
            score = float(row["score"])
            poly = _rect_polygon(bbox)
            det = Detection(polygon=poly, bbox=poly.bbox(), score=score,
                            source="external-detector")
        except Exception as exc:
            raise ParseError(f"{path}: line {row_no}: {exc}") from exc
        grouped.setdefault(str(row["image_id"]), []).append(det)
    return grouped


def write_csv_detections(grouped: Dict[str, List[Detection]], path: PathLike) -> None:
    rows = []
    for image_id in sorted(grouped):
        for det in sorted(grouped[image_id], key=_feature_sort_key):
            b = det.bbox
            rows.append((image_id,
                         format(b.xmin, ".9g"), format(b.ymin, ".9g"),
                         format(b.xmax, ".9g"), format(b.ymax, ".9g"),
                         format(det.score, ".9g")))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "xmin", "ymin", "xmax", "ymax", "score"])
        writer.writerows(rows)


def read_detections_any(path: PathLike) -> Dict[str, List[Detection]]:
    """Read detections grouped by image id from GeoJSON or CSV, by extension."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_csv_detections(path)
    return {image_id: list(ds.detections)
            for image_id, ds in read_detections_grouped(path).items()}


def detections_for_image(path: PathLike, image_id: str) -> List[Detection]:
    """Detections for one image from a possibly multi-image file.

    A single-image file is used as-is whatever its recorded id; in a
    multi-image file the id must match.
    """
    grouped = read_detections_any(path)
    if not grouped:
        return []
    if len(grouped) == 1:
        return next(iter(grouped.values()))
    if image_id not in grouped:
        raise ConfigError(f"{path} holds images {sorted(grouped)}, none named {image_id!r}")
    return grouped[image_id]
