import { pngDimensions } from "../pngHeader.js";
import { rleEncode } from "../rle.js";
import type { PredictorRequest } from "../protocol.js";
import type { ModelBackend, SegmentOut } from "./types.js";

function rectMask(
  width: number,
  height: number,
  x0: number,
  y0: number,
  x1: number,
  y1: number,
): Uint8Array {
  const mask = new Uint8Array(width * height);
  const cx0 = Math.max(0, Math.floor(x0));
  const cy0 = Math.max(0, Math.floor(y0));
  const cx1 = Math.min(width, Math.ceil(x1));
  const cy1 = Math.min(height, Math.ceil(y1));
  for (let y = cy0; y < cy1; y++) {
    mask.fill(1, y * width + cx0, y * width + cx1);
  }
  return mask;
}

/**
 * Deterministic stand-in model for tests and dry runs: box prompts
 * yield the filled box, point prompts a 5x5 square around the point.
 */
export class MockBackend implements ModelBackend {
  readonly identity = "mock";

  async segment(req: PredictorRequest): Promise<SegmentOut[]> {
    const { width, height } = await pngDimensions(req.image_path);
    const out: SegmentOut[] = [];
    if (req.boxes.length > 0) {
      req.boxes.forEach(([x0, y0, x1, y1], i) => {
        const mask = rectMask(width, height, x0, y0, x1, y1);
        if (mask.some((v) => v)) {
          out.push({ rle: rleEncode(mask, width, height), score: 0.875, promptIndex: i });
        }
      });
      return out;
    }
    req.points.forEach(([x, y], i) => {
      const mask = rectMask(width, height, x - 2, y - 2, x + 3, y + 3);
      if (mask.some((v) => v)) {
        out.push({ rle: rleEncode(mask, width, height), score: 0.5, promptIndex: i });
      }
    });
    return out;
  }

  async close(): Promise<void> {}
}
