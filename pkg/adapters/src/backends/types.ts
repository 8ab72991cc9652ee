import type { RleMask } from "../rle.js";
import type { PredictorRequest } from "../protocol.js";

export interface SegmentOut {
  rle: RleMask;
  score: number;
  promptIndex: number | null;
}

/**
 * A model backend produces raw segments for one request. The server
 * owns protocol conformance (validation, score clamping, error lines);
 * backends never post-process masks (no NMS, no component filtering) —
 * the primary pipeline owns that, keeping behavior model-agnostic.
 */
export interface ModelBackend {
  readonly identity: string;
  segment(req: PredictorRequest): Promise<SegmentOut[]>;
  close(): Promise<void>;
}

/** Unrecoverable backend failure: the serving process must exit nonzero. */
export class BackendDownError extends Error {}
