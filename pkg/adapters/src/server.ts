import { createInterface } from "node:readline";
import type { Readable, Writable } from "node:stream";

import { pngDimensions } from "./pngHeader.js";
import {
  errorLine,
  parseRequestLine,
  salvageRequestId,
  serializeResponse,
  validateResponseAgainstRequest,
  type PredictorRequest,
  type PredictorResponse,
} from "./protocol.js";
import { BackendDownError, type ModelBackend } from "./backends/types.js";

const clamp01 = (v: number) => Math.min(Math.max(v, 0), 1);

/**
 * Answer one request through the backend and normalize the result into
 * a conformant response: boxes take precedence over points, model
 * confidences are clamped into [0,1], and masks are checked against
 * the tile dimensions.
 */
export async function answerRequest(
  backend: ModelBackend,
  req: PredictorRequest,
): Promise<PredictorResponse> {
  const effective: PredictorRequest =
    req.boxes.length > 0 ? { ...req, points: [] } : req;
  const tile = await pngDimensions(effective.image_path);
  const raw = await backend.segment(effective);
  const response: PredictorResponse = {
    request_id: req.request_id,
    segments: raw.map((s) => ({
      rle: { width: s.rle.width, height: s.rle.height, runs: s.rle.runs },
      score: clamp01(s.score),
      prompt_index: s.promptIndex,
    })),
  };
  validateResponseAgainstRequest(effective, response, tile);
  return response;
}

/**
 * Serve the predictor protocol until EOF: exactly one response line
 * per request line, per-request failures reported in-band, fatal
 * backend failures propagated (the process must exit nonzero).
 */
export async function serveProtocol(
  input: Readable,
  output: Writable,
  backend: ModelBackend,
): Promise<void> {
  const lines = createInterface({ input });
  for await (const raw of lines) {
    const line = raw.trim();
    if (!line) continue;
    let requestId = "";
    try {
      requestId = salvageRequestId(line);
      const req = parseRequestLine(line);
      requestId = req.request_id;
      const resp = await answerRequest(backend, req);
      output.write(serializeResponse(resp) + "\n");
    } catch (e) {
      if (e instanceof BackendDownError) {
        output.write(errorLine(requestId, e.message) + "\n");
        throw e;
      }
      output.write(errorLine(requestId, (e as Error).message) + "\n");
    }
  }
}
