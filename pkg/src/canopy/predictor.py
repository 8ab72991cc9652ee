"""The pluggable segmentation boundary.

External segmenters run as subprocesses speaking newline-delimited JSON
on stdin/stdout; tile images travel by file path. One request carries
all prompts for one tile::

    {"request_id":..., "image_path":..., "points":[[x,y],...],
     "boxes":[[xmin,ymin,xmax,ymax],...], "params":{...}}

    {"request_id":..., "segments":[{"rle":{"width":...,"height":...,
     "runs":[...]},"score":...,"prompt_index":...},...]}

Masks are run-length encoded row-major, alternating background and
foreground counts starting with background (a leading 0 means the mask
starts with foreground). Golden copies of both line shapes live in
``golden/`` and are bit-exact normative.

A deterministic oracle segmenter (luminance threshold + connected
components) doubles as the test double for real models; it is also
exposed as the ``canopy-oracle`` console script serving the protocol.
"""

from __future__ import annotations

import argparse
import json
import shlex
import subprocess
import sys
import threading
from collections import deque
from dataclasses import dataclass, field
from queue import Empty, Queue
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

from . import canonical
from .errors import CodecError, PredictorError, ProtocolError
from .geometry import BBox, largest_component
from .prompts import BoxPrompt, PointPrompt, PromptSet
from .raster import RasterImage, load_raster

_EIGHT_CONNECTED = np.ones((3, 3), dtype=np.uint8)
_STDERR_TAIL = 50

DEFAULT_TIMEOUT = 300.0
DEFAULT_LUMINANCE_THRESHOLD = 128.0


@dataclass(frozen=True)
class RLEMask:
    width: int
    height: int
    runs: Tuple[int, ...]


@dataclass(frozen=True)
class Segment:
    rle: RLEMask
    score: float
    prompt_index: Optional[int] = None


@dataclass(frozen=True)
class PredictorRequest:
    request_id: str
    image_path: str
    prompts: PromptSet
    params: Dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class PredictorResponse:
    request_id: str
    segments: Tuple[Segment, ...]


# ---------------------------------------------------------------------------
# RLE codec
# ---------------------------------------------------------------------------

def rle_encode(mask: np.ndarray) -> RLEMask:
    """Encode a boolean mask as alternating bg/fg run lengths, row-major."""
    arr = np.asarray(mask).astype(bool)
    if arr.ndim != 2 or arr.size == 0:
        raise CodecError(f"mask must be a non-empty 2-D array, got shape {arr.shape}")
    h, w = arr.shape
    flat = arr.ravel()
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = [int(r) for r in np.diff(bounds)]
    if flat[0]:
        runs = [0] + runs
    return RLEMask(width=w, height=h, runs=tuple(runs))


def rle_decode(r: RLEMask) -> np.ndarray:
    """Inverse of ``rle_encode``; strict about run-length invariants."""
    if r.width < 1 or r.height < 1:
        raise CodecError(f"mask dimensions must be positive, got {r.width}x{r.height}")
    runs = list(r.runs)
    if not runs:
        raise CodecError("empty run list")
    if any((not isinstance(v, int)) or v < 0 for v in runs):
        raise CodecError(f"runs must be non-negative integers, got {runs}")
    if any(v == 0 for v in runs[1:]):
        raise CodecError(f"interior zero-length run in {runs}")
    total = sum(runs)
    if total != r.width * r.height:
        raise CodecError(f"runs sum to {total}, expected {r.width * r.height} "
                         f"for a {r.width}x{r.height} mask")
    values = np.resize(np.array([False, True]), len(runs))
    flat = np.repeat(values, runs)
    return flat.reshape(r.height, r.width)


# ---------------------------------------------------------------------------
# Wire format
# ---------------------------------------------------------------------------

def request_line(req: PredictorRequest) -> str:
    """Canonical single-line JSON for a request (no trailing newline)."""
    doc = {
        "request_id": req.request_id,
        "image_path": req.image_path,
        "points": [[float(p.x), float(p.y)] for p in req.prompts.points],
        "boxes": [[float(b.bbox.xmin), float(b.bbox.ymin),
                   float(b.bbox.xmax), float(b.bbox.ymax)] for b in req.prompts.boxes],
        "params": {k: req.params[k] for k in sorted(req.params)},
    }
    return canonical.dumps(doc, floats="repr", compact=True)


def response_line(resp: PredictorResponse) -> str:
    doc = {
        "request_id": resp.request_id,
        "segments": [
            {
                "rle": {"width": s.rle.width, "height": s.rle.height,
                        "runs": list(s.rle.runs)},
                "score": float(s.score),
                "prompt_index": s.prompt_index,
            }
            for s in resp.segments
        ],
    }
    return canonical.dumps(doc, floats="repr", compact=True)


def error_line(request_id: str, message: str) -> str:
    return canonical.dumps({"request_id": request_id, "error": message}, compact=True)


def _wire_object(line: str, what: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed {what} line (not JSON at offset {exc.pos}): "
                            f"{line[:200]!r}") from exc
    if not isinstance(obj, dict):
        raise ProtocolError(f"{what} line must be a JSON object, got {type(obj).__name__}")
    return obj


def parse_request_line(line: str) -> PredictorRequest:
    obj = _wire_object(line, "request")
    try:
        request_id = obj["request_id"]
        image_path = obj["image_path"]
        points = tuple(PointPrompt(x=float(p[0]), y=float(p[1]))
                       for p in obj.get("points", []))
        boxes = tuple(BoxPrompt(bbox=BBox(float(b[0]), float(b[1]),
                                          float(b[2]), float(b[3]), frame="tile"))
                      for b in obj.get("boxes", []))
        params = {str(k): str(v) for k, v in obj.get("params", {}).items()}
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise ProtocolError(f"malformed request line: {exc}") from exc
    if not isinstance(request_id, str) or not isinstance(image_path, str):
        raise ProtocolError("request_id and image_path must be strings")
    prompts = PromptSet(tile_index=-1, points=points, boxes=boxes)
    return PredictorRequest(request_id=request_id, image_path=image_path,
                            prompts=prompts, params=params)


def parse_response_line(line: str) -> PredictorResponse:
    obj = _wire_object(line, "response")
    rid = obj.get("request_id")
    if not isinstance(rid, str):
        raise ProtocolError(f"response missing string request_id: {line[:200]!r}")
    if "error" in obj:
        raise PredictorError(f"predictor reported an error for request {rid!r}: {obj['error']}")
    segments = []
    raw = obj.get("segments")
    if not isinstance(raw, list):
        raise ProtocolError(f"response for {rid!r} has no segments list")
    for i, seg in enumerate(raw):
        try:
            rle = seg["rle"]
            mask = RLEMask(width=int(rle["width"]), height=int(rle["height"]),
                           runs=tuple(int(v) for v in rle["runs"]))
            score = float(seg["score"])
            prompt_index = seg.get("prompt_index")
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed segment {i} for request {rid!r}: {exc}") from exc
        if prompt_index is not None and not isinstance(prompt_index, int):
            raise ProtocolError(f"segment {i} prompt_index must be int or null")
        if not (0.0 <= score <= 1.0):
            raise ProtocolError(f"segment {i} score {score} outside [0,1]")
        if sum(mask.runs) != mask.width * mask.height:
            raise ProtocolError(f"segment {i} rle runs sum {sum(mask.runs)} != "
                                f"{mask.width}x{mask.height}")
        segments.append(Segment(rle=mask, score=score, prompt_index=prompt_index))
    return PredictorResponse(request_id=rid, segments=tuple(segments))


def validate_response(request: PredictorRequest, response: PredictorResponse) -> None:
    """Cross-check a response against its request (ids, mask dims, indices)."""
    if response.request_id != request.request_id:
        raise ProtocolError(f"response id {response.request_id!r} does not match "
                            f"request id {request.request_id!r}")
    with Image.open(request.image_path) as img:
        width, height = img.size
    n_boxes = len(request.prompts.boxes)
    for i, seg in enumerate(response.segments):
        if (seg.rle.width, seg.rle.height) != (width, height):
            raise ProtocolError(
                f"segment {i} mask is {seg.rle.width}x{seg.rle.height}, "
                f"tile is {width}x{height}")
        if n_boxes and seg.prompt_index is None:
            raise ProtocolError(f"segment {i} of a box-prompted request lacks prompt_index")
        if seg.prompt_index is not None and not (0 <= seg.prompt_index < max(n_boxes, len(request.prompts.points))):
            raise ProtocolError(f"segment {i} prompt_index {seg.prompt_index} out of range")


# ---------------------------------------------------------------------------
# Oracle segmenter
# ---------------------------------------------------------------------------

def luminance(tile: RasterImage) -> np.ndarray:
    """Rec.601 luminance as float; grayscale passes through."""
    data = tile.data.astype(np.float64)
    if tile.channels == 1:
        return data[:, :, 0]
    return 0.299 * data[:, :, 0] + 0.587 * data[:, :, 1] + 0.114 * data[:, :, 2]


def _component_segment(mask: np.ndarray, prompt_index: Optional[int]) -> Segment:
    rows, cols = np.nonzero(mask)
    area = rows.size
    bbox_area = (int(rows.max()) + 1 - int(rows.min())) * (int(cols.max()) + 1 - int(cols.min()))
    return Segment(rle=rle_encode(mask), score=float(area / bbox_area),
                   prompt_index=prompt_index)


def oracle_segment(tile: RasterImage, prompts: PromptSet,
                   luminance_threshold: float = DEFAULT_LUMINANCE_THRESHOLD,
                   request_id: str = "oracle") -> PredictorResponse:
    """Threshold-and-flood-fill segmenter used as the model test double.

    Foreground is luminance >= threshold. A point prompt yields the
    8-connected component under it (nothing over background); a box
    prompt yields the largest component of foreground clipped to the
    box. Scores are component area over component bbox area. Box
    prompts take precedence when both kinds are present.
    """
    if len(prompts) == 0:
        raise ProtocolError("empty prompt set")
    fg = luminance(tile) >= luminance_threshold
    segments: List[Segment] = []
    if prompts.boxes:
        for idx, bp in enumerate(prompts.boxes):
            x0 = max(int(np.floor(bp.bbox.xmin)), 0)
            y0 = max(int(np.floor(bp.bbox.ymin)), 0)
            x1 = min(int(np.ceil(bp.bbox.xmax)), tile.width)
            y1 = min(int(np.ceil(bp.bbox.ymax)), tile.height)
            if x1 <= x0 or y1 <= y0:
                continue
            clipped = np.zeros_like(fg)
            clipped[y0:y1, x0:x1] = fg[y0:y1, x0:x1]
            if not clipped.any():
                continue
            segments.append(_component_segment(largest_component(clipped), idx))
    else:
        labels, _ = ndimage.label(fg, structure=_EIGHT_CONNECTED)
        for idx, pt in enumerate(prompts.points):
            px, py = int(np.floor(pt.x)), int(np.floor(pt.y))
            if not (0 <= px < tile.width and 0 <= py < tile.height):
                continue
            lab = labels[py, px]
            if lab == 0:
                continue
            segments.append(_component_segment(labels == lab, idx))
    return PredictorResponse(request_id=request_id, segments=tuple(segments))


class OraclePredictor:
    """In-process predictor backed by ``oracle_segment``."""

    def __init__(self, luminance_threshold: float = DEFAULT_LUMINANCE_THRESHOLD) -> None:
        self.luminance_threshold = float(luminance_threshold)

    @property
    def identity(self) -> str:
        return f"oracle(luminance_threshold={format(self.luminance_threshold, 'g')})"

    def segment_tile(self, tile: RasterImage, prompts: PromptSet,
                     request_id: str) -> PredictorResponse:
        return oracle_segment(tile, prompts, self.luminance_threshold, request_id=request_id)

    def segment(self, request: PredictorRequest) -> PredictorResponse:
        threshold = float(request.params.get("luminance_threshold", self.luminance_threshold))
        tile = load_raster(request.image_path)
        response = oracle_segment(tile, request.prompts, threshold,
                                  request_id=request.request_id)
        validate_response(request, response)
        return response

    def close(self) -> None:
        pass


# ---------------------------------------------------------------------------
# Subprocess predictor
# ---------------------------------------------------------------------------

class SubprocessPredictor:
    """One external predictor process handling requests strictly serially."""

    def __init__(self, command: str, timeout: float = DEFAULT_TIMEOUT) -> None:
        self.command = command
        self.timeout = timeout
        argv = shlex.split(command)
        if not argv:
            raise PredictorError("empty predictor command")
        try:
            self._proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.PIPE, text=True, bufsize=1)
        except OSError as exc:
            raise PredictorError(f"cannot launch predictor {command!r}: {exc}") from exc
        self._lines: Queue = Queue()
        self._stderr_tail: deque = deque(maxlen=_STDERR_TAIL)
        self._stdout_thread = threading.Thread(
            target=self._pump, args=(self._proc.stdout, self._lines), daemon=True)
        self._stderr_thread = threading.Thread(
            target=self._pump_stderr, args=(self._proc.stderr,), daemon=True)
        self._stdout_thread.start()
        self._stderr_thread.start()

    @property
    def identity(self) -> str:
        return self.command

    @staticmethod
    def _pump(stream, queue: Queue) -> None:
        for line in stream:
            queue.put(line)
        queue.put(None)  # EOF sentinel

    def _pump_stderr(self, stream) -> None:
        for line in stream:
            self._stderr_tail.append(line.rstrip("\n"))

    def _diagnostics(self) -> str:
        code = self._proc.poll()
        tail = "\n".join(self._stderr_tail) or "<no stderr output>"
        state = f"exit code {code}" if code is not None else "still running"
        return f"predictor {self.command!r} ({state}); stderr tail:\n{tail}"

    def segment(self, request: PredictorRequest) -> PredictorResponse:
        if self._proc.poll() is not None:
            raise PredictorError(f"predictor exited before request "
                                 f"{request.request_id!r}: {self._diagnostics()}")
        try:
            self._proc.stdin.write(request_line(request) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise PredictorError(f"failed to send request {request.request_id!r}: "
                                 f"{self._diagnostics()}") from exc
        try:
            line = self._lines.get(timeout=self.timeout)
        except Empty:
            self._proc.kill()
            raise PredictorError(f"predictor timed out after {self.timeout}s on request "
                                 f"{request.request_id!r}: {self._diagnostics()}") from None
        if line is None:
            raise PredictorError(f"predictor closed its output during request "
                                 f"{request.request_id!r}: {self._diagnostics()}")
        response = parse_response_line(line)
        validate_response(request, response)
        return response

    def close(self) -> None:
        try:
            if self._proc.stdin:
                self._proc.stdin.close()
        except OSError:
            pass
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()


def make_predictor(command: str, *, timeout: float = DEFAULT_TIMEOUT,
                   oracle_threshold: float = DEFAULT_LUMINANCE_THRESHOLD):
    """Build the predictor named by ``command`` ("oracle" is built in)."""
    if command.strip() == "oracle":
        return OraclePredictor(luminance_threshold=oracle_threshold)
    return SubprocessPredictor(command, timeout=timeout)


# ---------------------------------------------------------------------------
# Protocol server for the oracle (console script `canopy-oracle`)
# ---------------------------------------------------------------------------

def serve_oracle(stdin, stdout, luminance_threshold: float) -> None:
    """Answer protocol requests on a stream pair until EOF."""
    for raw in stdin:
        line = raw.strip()
        if not line:
            continue
        rid = ""
        try:
            try:
                obj = json.loads(line)
                if isinstance(obj, dict) and isinstance(obj.get("request_id"), str):
                    rid = obj["request_id"]
            except json.JSONDecodeError:
                pass
            request = parse_request_line(line)
            rid = request.request_id
            threshold = float(request.params.get("luminance_threshold", luminance_threshold))
            tile = load_raster(request.image_path)
            response = oracle_segment(tile, request.prompts, threshold,
                                      request_id=request.request_id)
            stdout.write(response_line(response) + "\n")
        except Exception as exc:  # keep serving; report per-request errors in-band
            stdout.write(error_line(rid, f"{type(exc).__name__}: {exc}") + "\n")
        stdout.flush()


def oracle_worker_main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="canopy-oracle",
        description="Serve the deterministic oracle segmenter over the "
                    "newline-delimited JSON predictor protocol.")
    parser.add_argument("--threshold", type=float, default=DEFAULT_LUMINANCE_THRESHOLD,
                        help="luminance threshold for foreground (default 128)")
    args = parser.parse_args(argv)
    serve_oracle(sys.stdin, sys.stdout, args.threshold)
    return 0


if __name__ == "__main__":
    sys.exit(oracle_worker_main())
