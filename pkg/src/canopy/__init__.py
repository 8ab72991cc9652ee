"""Zero-shot tree crown delineation around a pluggable segmenter boundary."""

from .detections_io import DetectionSet, read_detections, write_detections
from .errors import CanopyError
from .evaluation import EvalConfig, GroundTruthSet, MetricsReport, evaluate, match_detections
from .geometry import BBox, Detection, Polygon, bbox_iou, nms, polygon_iou
from .pipeline import PipelineConfig, merge_tiles, run
from .predictor import OraclePredictor, SubprocessPredictor, oracle_segment, rle_decode, rle_encode
from .prompts import BoxPrompt, PointPrompt, PromptSet, boxes_from_detections, grid_points
from .raster import AffineGeoTransform, PixelWindow, RasterImage, load_raster, read_window
from .tiling import TilingPlan, plan_tiles

__version__ = "0.1.0"

__all__ = [
    "AffineGeoTransform", "BBox", "BoxPrompt", "CanopyError", "Detection",
    "DetectionSet", "EvalConfig", "GroundTruthSet", "MetricsReport",
    "OraclePredictor", "PipelineConfig", "PixelWindow", "PointPrompt",
    "Polygon", "PromptSet", "RasterImage", "SubprocessPredictor", "TilingPlan",
    "bbox_iou", "boxes_from_detections", "evaluate", "grid_points",
    "load_raster", "match_detections", "merge_tiles", "nms", "oracle_segment",
    "plan_tiles", "polygon_iou", "read_detections", "read_window",
    "rle_decode", "rle_encode", "run", "write_detections",
]
