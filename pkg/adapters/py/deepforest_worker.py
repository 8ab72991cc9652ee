#!/usr/bin/env python3
"""DeepForest one-shot worker: detect tree crowns in one image and
write `image_id,xmin,ymin,xmax,ymax,score` CSV in the pixel frame.

Exits 42 when the deepforest package is missing so the adapter can
print an install hint. Inference runs in eval mode, so reruns on the
same image produce identical CSV.
"""

import argparse
import sys

try:
    from deepforest import main as deepforest_main
except ImportError as exc:
    sys.stderr.write(f"deepforest runtime not available: {exc}\n"
                     "install with: pip install deepforest\n")
    sys.exit(42)


def load_model():
    model = deepforest_main.deepforest()
    try:
        model.load_model("weecology/deepforest-tree")  # 1.5-style release loading
    except (AttributeError, TypeError):
        model.use_release()
    model.model.eval()
    return model


def format_real(value):
    if float(value).is_integer():
        return str(int(value))
    return format(float(value), ".9g")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--image", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--image-id", required=True)
    args = parser.parse_args()

    model = load_model()
    boxes = model.predict_image(path=args.image)
    rows = []
    if boxes is not None:
        boxes = boxes.sort_values(["score", "xmin", "ymin"],
                                  ascending=[False, True, True])
        for _, row in boxes.iterrows():
            rows.append(",".join([
                args.image_id,
                format_real(row["xmin"]), format_real(row["ymin"]),
                format_real(row["xmax"]), format_real(row["ymax"]),
                format_real(row["score"]),
            ]))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("image_id,xmin,ymin,xmax,ymax,score\n")
        for row in rows:
            fh.write(row + "\n")


if __name__ == "__main__":
    main()
