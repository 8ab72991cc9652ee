#!/usr/bin/env python3
"""SAM2 inference worker for the bridge protocol.

Reads one JSON request per line ({id, image_path, points, boxes,
params}), answers one JSON reply per line ({id, segments:[{rle, score,
prompt_index}]} or {id, error}). Masks are RLE-encoded row-major,
alternating background/foreground runs starting with background.

In auto mode the request's point list is ignored and SAM2's automatic
mask generator samples its own grid (--points-per-side). In box mode
one segment is produced per request box.

Exits 42 when the sam2 package is missing so the adapter can print an
install hint.
"""

import argparse
import json
import sys

try:
    import numpy as np
    import torch
    from PIL import Image
    from sam2.automatic_mask_generator import SAM2AutomaticMaskGenerator
    from sam2.build_sam import build_sam2
    from sam2.sam2_image_predictor import SAM2ImagePredictor
except ImportError as exc:
    sys.stderr.write(f"sam2 runtime not available: {exc}\n"
                     "install with: pip install 'sam2 @ git+https://github.com/"
                     "facebookresearch/sam2' torch pillow numpy\n")
    sys.exit(42)


def rle_encode(mask):
    flat = np.asarray(mask, dtype=bool).ravel()
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = [int(v) for v in np.diff(bounds)]
    if flat[0]:
        runs = [0] + runs
    h, w = mask.shape
    return {"width": int(w), "height": int(h), "runs": runs}


def load_image(path):
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


class AutoMode:
    def __init__(self, model, points_per_side):
        self.generator = SAM2AutomaticMaskGenerator(model, points_per_side=points_per_side)

    def __call__(self, image, request):
        segments = []
        for record in self.generator.generate(image):
            segments.append({
                "rle": rle_encode(record["segmentation"]),
                "score": float(record.get("predicted_iou", 0.0)),
                "prompt_index": None,
            })
        return segments


class BoxMode:
    def __init__(self, model):
        self.predictor = SAM2ImagePredictor(model)

    def __call__(self, image, request):
        boxes = request.get("boxes") or []
        segments = []
        if not boxes:
            return segments
        self.predictor.set_image(image)
        for index, box in enumerate(boxes):
            masks, scores, _ = self.predictor.predict(
                box=np.asarray(box, dtype=np.float32),
                multimask_output=False)
            segments.append({
                "rle": rle_encode(np.asarray(masks[0], dtype=bool)),
                "score": float(scores[0]),
                "prompt_index": index,
            })
        return segments


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--model-config", default="configs/sam2.1/sam2.1_hiera_l.yaml",
                        help="SAM2 model config (default: Hiera-L)")
    parser.add_argument("--mode", choices=("auto", "box"), default="auto")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--points-per-side", type=int, default=32)
    args = parser.parse_args()

    model = build_sam2(args.model_config, args.checkpoint, device=args.device)
    handler = AutoMode(model, args.points_per_side) if args.mode == "auto" else BoxMode(model)

    for raw in sys.stdin:
        line = raw.strip()
        if not line:
            continue
        request_id = ""
        try:
            request = json.loads(line)
            request_id = str(request.get("id", ""))
            image = load_image(request["image_path"])
            with torch.inference_mode():
                segments = handler(image, request)
            reply = {"id": request_id, "segments": segments}
        except Exception as exc:
            reply = {"id": request_id, "error": f"{type(exc).__name__}: {exc}"}
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
