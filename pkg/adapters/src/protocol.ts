/**
 * Wire types and validation for the predictor protocol.
 *
 * One JSON line per request/response; the golden files in ../golden/
 * are bit-exact normative for both shapes. Adapters must emit exactly
 * one response line per request line; failures are reported in-band as
 * `{"request_id": ..., "error": ...}` lines.
 */

import { z } from "zod";

export const rleSchema = z
  .object({
    width: z.number().int().min(1),
    height: z.number().int().min(1),
    runs: z.array(z.number().int().min(0)).min(1),
  })
  .refine((r) => r.runs.slice(1).every((v) => v > 0), {
    message: "interior zero-length run",
  })
  .refine((r) => r.runs.reduce((a, b) => a + b, 0) === r.width * r.height, {
    message: "runs must sum to width*height",
  });

export const segmentSchema = z.object({
  rle: rleSchema,
  score: z.number().min(0).max(1),
  prompt_index: z.number().int().min(0).nullable(),
});

export const responseSchema = z.object({
  request_id: z.string(),
  segments: z.array(segmentSchema),
});

export const requestSchema = z.object({
  request_id: z.string(),
  image_path: z.string(),
  points: z.array(z.tuple([z.number(), z.number()])).default([]),
  boxes: z
    .array(z.tuple([z.number(), z.number(), z.number(), z.number()]))
    .default([]),
  params: z.record(z.string(), z.string()).default({}),
});

export type PredictorRequest = z.infer<typeof requestSchema>;
export type PredictorResponse = z.infer<typeof responseSchema>;
export type WireSegment = z.infer<typeof segmentSchema>;

export class ProtocolError extends Error {}

export function parseRequestLine(line: string): PredictorRequest {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch (e) {
    throw new ProtocolError(`request line is not JSON: ${(e as Error).message}`);
  }
  const parsed = requestSchema.safeParse(raw);
  if (!parsed.success) {
    throw new ProtocolError(`malformed request: ${parsed.error.issues[0]?.message}`);
  }
  if (parsed.data.points.length === 0 && parsed.data.boxes.length === 0) {
    throw new ProtocolError("empty prompt set");
  }
  return parsed.data;
}

/** Serialize with the protocol's canonical key order. */
export function serializeResponse(resp: PredictorResponse): string {
  return JSON.stringify({
    request_id: resp.request_id,
    segments: resp.segments.map((s) => ({
      rle: { width: s.rle.width, height: s.rle.height, runs: s.rle.runs },
      score: s.score,
      prompt_index: s.prompt_index,
    })),
  });
}

export function errorLine(requestId: string, message: string): string {
  return JSON.stringify({ request_id: requestId, error: message });
}

/** Best-effort request_id recovery from a line we failed to parse. */
export function salvageRequestId(line: string): string {
  try {
    const raw = JSON.parse(line);
    if (raw && typeof raw === "object" && typeof (raw as any).request_id === "string") {
      return (raw as any).request_id;
    }
  } catch {
    /* not JSON at all */
  }
  return "";
}

/**
 * Cross-checks a response against its request: every mask must match
 * the tile dimensions, and box-prompted requests require a prompt
 * index on every segment.
 */
export function validateResponseAgainstRequest(
  req: PredictorRequest,
  resp: PredictorResponse,
  tile: { width: number; height: number },
): void {
  if (resp.request_id !== req.request_id) {
    throw new ProtocolError(
      `response id ${resp.request_id} does not match request id ${req.request_id}`,
    );
  }
  const prompts = req.boxes.length > 0 ? req.boxes.length : req.points.length;
  resp.segments.forEach((seg, i) => {
    if (seg.rle.width !== tile.width || seg.rle.height !== tile.height) {
      throw new ProtocolError(
        `segment ${i} mask is ${seg.rle.width}x${seg.rle.height}, ` +
          `tile is ${tile.width}x${tile.height}`,
      );
    }
    if (req.boxes.length > 0 && seg.prompt_index === null) {
      throw new ProtocolError(`segment ${i} of a box-prompted request lacks prompt_index`);
    }
    if (seg.prompt_index !== null && seg.prompt_index >= prompts) {
      throw new ProtocolError(`segment ${i} prompt_index ${seg.prompt_index} out of range`);
    }
  });
}
