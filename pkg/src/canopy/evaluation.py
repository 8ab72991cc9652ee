"""Benchmark protocol: IOU-thresholded matching and per-image precision/recall.

Predictions are matched greedily in score order (highest first) to the
unmatched ground-truth box of highest IOU at or above the threshold.
Precision and recall are computed independently for each image and then
macro-averaged (unweighted mean over images).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from . import canonical
from .detections_io import read_detections_any
from .errors import ConfigError, FrameError, ParseError
from .geometry import BBox, Detection, Polygon, bbox_iou

PathLike = Union[str, Path]

DEFAULT_EVAL_IOU = 0.4
DEFAULT_MIN_SCORE = 0.1


@dataclass(frozen=True)
class GroundTruthSet:
    image_id: str
    boxes: Tuple[BBox, ...]
    polygons: Optional[Tuple[Polygon, ...]] = None

    def __post_init__(self) -> None:
        if not self.image_id:
            raise ConfigError("ground truth image_id must be non-empty")


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = DEFAULT_EVAL_IOU
    min_score: float = DEFAULT_MIN_SCORE
    geometry: str = "bbox"

    def __post_init__(self) -> None:
        if not (0.0 <= self.iou_threshold <= 1.0):
            raise ConfigError(f"iou_threshold must be in [0,1], got {self.iou_threshold}")
        if not (0.0 <= self.min_score <= 1.0):
            raise ConfigError(f"min_score must be in [0,1], got {self.min_score}")
        if self.geometry != "bbox":
            raise ConfigError(f"evaluation geometry {self.geometry!r} is reserved; "
                              f"only 'bbox' is supported")

    def to_json_value(self) -> dict:
        return {"iou_threshold": self.iou_threshold, "min_score": self.min_score,
                "geometry": self.geometry}


@dataclass(frozen=True)
class ImageMetrics:
    image_id: str
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class MetricsReport:
    per_image: Tuple[ImageMetrics, ...]
    macro_precision: float
    macro_recall: float
    ignored_images: int = 0

    def to_json_value(self, config: Optional[EvalConfig] = None) -> dict:
        doc: dict = {}
        if config is not None:
            doc["config"] = config.to_json_value()
        doc["per_image"] = [
            {"image_id": m.image_id, "precision": m.precision, "recall": m.recall,
             "tp": m.tp, "fp": m.fp, "fn": m.fn}
            for m in self.per_image
        ]
        doc["macro"] = {"precision": self.macro_precision, "recall": self.macro_recall}
        doc["images"] = len(self.per_image)
        doc["ignored_images"] = self.ignored_images
        return doc

    def to_text_table(self) -> str:
        rows = [("image", "precision", "recall", "tp", "fp", "fn")]
        for m in self.per_image:
            rows.append((m.image_id, f"{m.precision:.3f}", f"{m.recall:.3f}",
                         str(m.tp), str(m.fp), str(m.fn)))
        rows.append(("macro", f"{self.macro_precision:.3f}", f"{self.macro_recall:.3f}",
                     "", "", ""))
        widths = [max(len(r[i]) for r in rows) for i in range(6)]
        lines = []
        for idx, row in enumerate(rows):
            cells = [row[0].ljust(widths[0])]
            cells += [row[i].rjust(widths[i]) for i in range(1, 6)]
            lines.append("  ".join(cells).rstrip())
            if idx == 0:
                lines.append("-" * len(lines[0]))
        return "\n".join(lines)


def _ratio(numerator: int, denominator: int, other_misses: int) -> float:
    """tp/(tp+x) with the empty-denominator convention."""
    if denominator == 0:
        return 1.0 if other_misses == 0 else 0.0
    return numerator / denominator


def match_detections(preds: Sequence[Detection], gts: Sequence[BBox],
                     cfg: EvalConfig) -> Tuple[int, int, int, List[Tuple[int, int]]]:
    """Greedy matching; returns (tp, fp, fn, matched (pred_idx, gt_idx) pairs).

    Predictions below ``cfg.min_score`` are discarded first. Indices in
    the returned pairs refer to the input sequences.
    """
    frames = {d.frame for d in preds} | {g.frame for g in gts}
    if len(frames) > 1:
        raise FrameError(f"predictions and ground truth mix frames: {sorted(frames)}")
    scored = [(i, d) for i, d in enumerate(preds) if d.score >= cfg.min_score]
    scored.sort(key=lambda item: item[1].sort_key())
    matched_gt: set = set()
    pairs: List[Tuple[int, int]] = []
    for pred_idx, det in scored:
        best_key = None
        best_idx = -1
        for gt_idx, gt in enumerate(gts):
            if gt_idx in matched_gt:
                continue
            iou = bbox_iou(det.bbox, gt)
            if iou < cfg.iou_threshold:
                continue
            key = (-iou, gt.xmin, gt.ymin, gt.xmax, gt.ymax)
            if best_key is None or key < best_key:
                best_key = key
                best_idx = gt_idx
        if best_key is not None:
            matched_gt.add(best_idx)
            pairs.append((pred_idx, best_idx))
    tp = len(pairs)
    fp = len(scored) - tp
    fn = len(gts) - tp
    return tp, fp, fn, pairs


def evaluate(preds_by_image: Mapping[str, Sequence[Detection]],
             gts_by_image: Mapping[str, GroundTruthSet],
             cfg: EvalConfig) -> MetricsReport:
    """Per-image metrics for every ground-truth image, macro-averaged.

    Every ground-truth image id must be present in the predictions map
    (an empty list means the detector found nothing there). Prediction
    ids without ground truth are counted as ignored.
    """
    if not gts_by_image:
        raise ConfigError("no ground-truth images to evaluate")
    missing = sorted(set(gts_by_image) - set(preds_by_image))
    if missing:
        raise ConfigError(f"predictions missing for ground-truth images: {missing}")
    per_image: List[ImageMetrics] = []
    for image_id in sorted(gts_by_image):
        gt = gts_by_image[image_id]
        tp, fp, fn, _ = match_detections(preds_by_image[image_id], gt.boxes, cfg)
        per_image.append(ImageMetrics(
            image_id=image_id,
            precision=_ratio(tp, tp + fp, fn),
            recall=_ratio(tp, tp + fn, fp),
            tp=tp, fp=fp, fn=fn))
    ignored = len(set(preds_by_image) - set(gts_by_image))
    n = len(per_image)
    return MetricsReport(
        per_image=tuple(per_image),
        macro_precision=sum(m.precision for m in per_image) / n,
        macro_recall=sum(m.recall for m in per_image) / n,
        ignored_images=ignored)


def write_report(report: MetricsReport, cfg: EvalConfig, path: PathLike) -> None:
    Path(path).write_text(canonical.dumps(report.to_json_value(cfg)) + "\n",
                          encoding="utf-8")


# ---------------------------------------------------------------------------
# Ground-truth loading
# ---------------------------------------------------------------------------

def _read_ground_truth_csv(path: Path) -> Dict[str, GroundTruthSet]:
    lines = path.read_text(encoding="utf-8").splitlines()
    reader = csv.DictReader(lines)
    required = {"image_id", "xmin", "ymin", "xmax", "ymax"}
    if reader.fieldnames is None or not required.issubset(reader.fieldnames):
        raise ParseError(f"{path}: ground-truth CSV header must contain "
                         f"{sorted(required)}, got {reader.fieldnames}")
    boxes: Dict[str, List[BBox]] = {}
    for row_no, row in enumerate(reader, start=2):
        try:
            box = BBox(float(row["xmin"]), float(row["ymin"]),
                       float(row["xmax"]), float(row["ymax"]), frame="image")
        except Exception as exc:
            raise ParseError(f"{path}: line {row_no}: {exc}") from exc
        boxes.setdefault(str(row["image_id"]), []).append(box)
    return {image_id: GroundTruthSet(image_id=image_id, boxes=tuple(bs))
            for image_id, bs in boxes.items()}


def read_ground_truth(path: PathLike) -> Dict[str, GroundTruthSet]:
    """Load ground truth from CSV or from a detections-format GeoJSON."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"cannot read ground truth: {path}: file not found")
    if path.suffix.lower() == ".csv":
        return _read_ground_truth_csv(path)
    grouped = read_detections_any(path)
    out: Dict[str, GroundTruthSet] = {}
    for image_id, dets in grouped.items():
        out[image_id] = GroundTruthSet(
            image_id=image_id,
            boxes=tuple(d.bbox for d in dets),
            polygons=tuple(d.polygon for d in dets))
    return out
