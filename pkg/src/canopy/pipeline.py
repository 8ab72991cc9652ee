"""End-to-end orchestration: tile, prompt, predict, post-process, merge.

Per tile: generate prompts, invoke the predictor, reduce each returned
mask to its largest connected component, vectorize it, and derive its
box. Tile-local detections are then translated into the image frame,
concatenated across tiles, score-filtered, and deduplicated by a single
global NMS pass, which also reconciles duplicates from overlapping
crops. Output is canonically sorted, so a fixed predictor yields
byte-identical results run to run regardless of tile processing order.
"""

from __future__ import annotations

import concurrent.futures
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from queue import Queue
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .detections_io import DetectionSet, detections_for_image
from .errors import CanopyError, ConfigError, PlumbingError, PredictorError
from .geometry import Detection, largest_component, mask_to_polygon, nms
from .predictor import (DEFAULT_LUMINANCE_THRESHOLD, DEFAULT_TIMEOUT, PredictorRequest,
                        PredictorResponse, make_predictor, rle_decode)
from .prompts import PromptSet, boxes_from_detections, grid_points
from .raster import RasterImage, read_window, save_png
from .tiling import TilingPlan, plan_tiles

PROMPT_MODES = ("automatic-grid", "bbox-prompted")
NMS_MODES = ("polygon", "bbox")

DEFAULT_NMS_IOU = 0.05
DEFAULT_MIN_SCORE = 0.1


@dataclass
class PipelineConfig:
    tile_size: int = 1024
    overlap: int = 128
    points_per_side: int = 32
    prompt_mode: str = "automatic-grid"
    prompt_detections_path: Optional[str] = None
    prompt_min_score: float = 0.1
    nms_iou: float = DEFAULT_NMS_IOU
    nms_mode: str = "polygon"
    min_score: float = DEFAULT_MIN_SCORE
    min_area_px: float = 0.0
    predictor_command: str = "oracle"
    predictor_params: Dict[str, str] = field(default_factory=dict)
    predictor_timeout: float = DEFAULT_TIMEOUT
    oracle_threshold: float = DEFAULT_LUMINANCE_THRESHOLD
    worker_count: int = 1

    def validate(self) -> None:
        if self.tile_size < 1:
            raise ConfigError(f"tile_size must be >= 1, got {self.tile_size}")
        if not (0 <= self.overlap < self.tile_size):
            raise ConfigError(f"overlap must satisfy 0 <= overlap < tile_size, "
                              f"got overlap={self.overlap} tile_size={self.tile_size}")
        if self.points_per_side < 1:
            raise ConfigError(f"points_per_side must be >= 1, got {self.points_per_side}")
        if self.prompt_mode not in PROMPT_MODES:
            raise ConfigError(f"prompt_mode must be one of {PROMPT_MODES}, "
                              f"got {self.prompt_mode!r}")
        if self.prompt_mode == "bbox-prompted" and not self.prompt_detections_path:
            raise ConfigError("bbox-prompted mode requires prompt_detections_path")
        if self.nms_mode not in NMS_MODES:
            raise ConfigError(f"nms_mode must be one of {NMS_MODES}, got {self.nms_mode!r}")
        for name, value in (("nms_iou", self.nms_iou), ("min_score", self.min_score),
                            ("prompt_min_score", self.prompt_min_score)):
            if not (0.0 <= value <= 1.0):
                raise ConfigError(f"{name} must be in [0,1], got {value}")
        if self.min_area_px < 0:
            raise ConfigError(f"min_area_px must be >= 0, got {self.min_area_px}")
        if not self.predictor_command.strip():
            raise ConfigError("predictor command is empty (set --predictor or "
                              "the CANOPY_PREDICTOR environment variable)")
        if self.predictor_timeout <= 0:
            raise ConfigError(f"predictor timeout must be positive, got {self.predictor_timeout}")
        if self.worker_count < 1:
            raise ConfigError(f"worker_count must be >= 1, got {self.worker_count}")

    def to_json_value(self) -> dict:
        return {
            "tile_size": self.tile_size,
            "overlap": self.overlap,
            "points_per_side": self.points_per_side,
            "prompt_mode": self.prompt_mode,
            "prompt_detections_path": self.prompt_detections_path,
            "prompt_min_score": self.prompt_min_score,
            "nms_iou": self.nms_iou,
            "nms_mode": self.nms_mode,
            "min_score": self.min_score,
            "min_area_px": self.min_area_px,
            "predictor_command": self.predictor_command,
            "predictor_params": {k: self.predictor_params[k]
                                 for k in sorted(self.predictor_params)},
            "predictor_timeout": self.predictor_timeout,
            "oracle_threshold": self.oracle_threshold,
            "worker_count": self.worker_count,
        }


def merge_tiles(per_tile: Sequence[Tuple[int, Sequence[Detection]]],
                plan: TilingPlan) -> List[Detection]:
    """Translate tile-local detections into the image frame, in plan order.

    No suppression happens here; the caller runs one global NMS pass.
    """
    merged: List[Detection] = []
    for tile_index, dets in sorted(per_tile, key=lambda item: item[0]):
        if not (0 <= tile_index < len(plan.windows)):
            raise PlumbingError(f"unknown tile index {tile_index} "
                                f"(plan has {len(plan.windows)} windows)")
        window = plan.windows[tile_index]
        for det in dets:
            if det.frame != "tile":
                raise PlumbingError(f"tile {tile_index} detection is in frame "
                                    f"{det.frame!r}, expected 'tile'")
            merged.append(det.translated(window.x0, window.y0, frame="image"))
    return merged


def _source_for_mode(prompt_mode: str) -> str:
    return "automatic-grid" if prompt_mode == "automatic-grid" else "bbox-prompted"


def _response_to_detections(response: PredictorResponse, source: str,
                            tile_index: int) -> List[Detection]:
    dets: List[Detection] = []
    for seg in response.segments:
        mask = largest_component(rle_decode(seg.rle))
        if not mask.any():
            continue
        poly = mask_to_polygon(mask, frame="tile")
        dets.append(Detection.from_polygon(poly, score=seg.score, source=source,
                                           tile_index=tile_index))
    return dets


def _build_prompt_sets(plan: TilingPlan, config: PipelineConfig,
                       image_id: str) -> Dict[int, PromptSet]:
    """Prompt set per tile index; tiles with nothing to prompt are omitted."""
    sets: Dict[int, PromptSet] = {}
    if config.prompt_mode == "automatic-grid":
        for idx, window in enumerate(plan.windows):
            points = tuple(grid_points(window.width, window.height,
                                       config.points_per_side))
            sets[idx] = PromptSet(tile_index=idx, points=points)
        return sets
    prompt_dets = detections_for_image(config.prompt_detections_path, image_id)
    for det in prompt_dets:
        if det.frame != "image":
            raise ConfigError(f"prompt detections must be in the image-pixel frame, "
                              f"got {det.frame!r} (convert world-frame files first)")
    for idx, window in enumerate(plan.windows):
        boxes = tuple(boxes_from_detections(prompt_dets, window, config.prompt_min_score))
        if boxes:
            sets[idx] = PromptSet(tile_index=idx, boxes=boxes)
    return sets


class _PredictorPool:
    def __init__(self, config: PipelineConfig, size: int) -> None:
        self._all = []
        self._free: Queue = Queue()
        for _ in range(size):
            pred = make_predictor(config.predictor_command,
                                  timeout=config.predictor_timeout,
                                  oracle_threshold=config.oracle_threshold)
            self._all.append(pred)
            self._free.put(pred)
        self.identity = self._all[0].identity

    def acquire(self):
        return self._free.get()

    def release(self, pred) -> None:
        self._free.put(pred)

    def close(self) -> None:
        for pred in self._all:
            pred.close()


def run(raster: RasterImage, config: PipelineConfig, *, image_id: str = "image",
        tile_order: Optional[Sequence[int]] = None,
        on_tile: Optional[Callable[[dict], None]] = None) -> DetectionSet:
    """Run the full delineation pipeline on one raster.

    ``tile_order`` optionally permutes tile processing (a debugging aid;
    results are identical for any order). ``on_tile`` receives a status
    dict per processed tile for manifest reporting.
    """
    config.validate()
    plan = plan_tiles(raster.width, raster.height, config.tile_size, config.overlap)
    prompt_sets = _build_prompt_sets(plan, config, image_id)
    order = list(range(len(plan.windows))) if tile_order is None else list(tile_order)
    if sorted(order) != list(range(len(plan.windows))):
        raise PlumbingError(f"tile_order must permute 0..{len(plan.windows) - 1}")
    source = _source_for_mode(config.prompt_mode)
    uses_files = config.predictor_command.strip() != "oracle"
    results: Dict[int, List[Detection]] = {}

    pool = _PredictorPool(config, config.worker_count)
    tmpdir = tempfile.TemporaryDirectory(prefix="canopy-tiles-") if uses_files else None
    try:
        def process(idx: int) -> List[Detection]:
            window = plan.windows[idx]
            prompts = prompt_sets.get(idx)
            if prompts is None or len(prompts) == 0:
                if on_tile:
                    on_tile({"tile_index": idx,
                             "window": [window.x0, window.y0, window.width, window.height],
                             "prompts": 0, "segments": 0, "detections": 0,
                             "status": "skipped"})
                return []
            tile = read_window(raster, window)
            request_id = f"tile-{idx:05d}"
            pred = pool.acquire()
            try:
                if uses_files:
                    image_path = Path(tmpdir.name) / f"{request_id}.png"
                    save_png(tile, image_path)
                    request = PredictorRequest(request_id=request_id,
                                               image_path=str(image_path),
                                               prompts=prompts,
                                               params=dict(config.predictor_params))
                    response = pred.segment(request)
                else:
                    response = pred.segment_tile(tile, prompts, request_id)
            finally:
                pool.release(pred)
            dets = _response_to_detections(response, source, idx)
            if on_tile:
                on_tile({"tile_index": idx,
                         "window": [window.x0, window.y0, window.width, window.height],
                         "prompts": len(prompts), "segments": len(response.segments),
                         "detections": len(dets), "status": "ok"})
            return dets

        if config.worker_count == 1:
            for idx in order:
                results[idx] = _run_tile(process, idx, plan)
        else:
            with concurrent.futures.ThreadPoolExecutor(
                    max_workers=config.worker_count) as executor:
                futures = {executor.submit(_run_tile, process, idx, plan): idx
                           for idx in order}
                for future in concurrent.futures.as_completed(futures):
                    results[futures[future]] = future.result()
    finally:
        pool.close()
        if tmpdir is not None:
            tmpdir.cleanup()

    merged = merge_tiles(sorted(results.items()), plan)
    filtered = [d for d in merged if d.score >= config.min_score]
    if config.min_area_px > 0:
        filtered = [d for d in filtered if d.polygon.area >= config.min_area_px]
    kept = nms(filtered, config.nms_iou, config.nms_mode)
    provenance = {"config": config.to_json_value(), "predictor": pool.identity}
    return DetectionSet(image_id=image_id, detections=tuple(kept), frame="image",
                        crs_id=raster.crs_id, provenance=provenance,
                        geo_transform=raster.transform)


def _run_tile(process: Callable[[int], List[Detection]], idx: int,
              plan: TilingPlan) -> List[Detection]:
    """Run one tile, attaching tile context to any failure."""
    try:
        return process(idx)
    except CanopyError as exc:
        window = plan.windows[idx]
        raise type(exc)(f"tile {idx} at ({window.x0},{window.y0},"
                        f"{window.width},{window.height}): {exc}") from exc
    except Exception as exc:
        window = plan.windows[idx]
        raise PredictorError(f"tile {idx} at ({window.x0},{window.y0},"
                             f"{window.width},{window.height}): "
                             f"{type(exc).__name__}: {exc}") from exc
