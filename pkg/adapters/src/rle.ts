/**
 * Run-length codec for binary masks, matching the predictor protocol:
 * row-major, alternating background/foreground run lengths starting
 * with background (a leading 0 means the mask starts with foreground).
 */

export interface RleMask {
  width: number;
  height: number;
  runs: number[];
}

export function rleEncode(mask: Uint8Array, width: number, height: number): RleMask {
  if (width < 1 || height < 1 || mask.length !== width * height) {
    throw new Error(`mask length ${mask.length} does not match ${width}x${height}`);
  }
  const runs: number[] = [];
  let current = 0; // runs start with background
  let length = 0;
  for (const raw of mask) {
    const bit = raw ? 1 : 0;
    if (bit === current) {
      length += 1;
    } else {
      runs.push(length);
      current = bit;
      length = 1;
    }
  }
  runs.push(length);
  return { width, height, runs };
}

export function rleDecode(rle: RleMask): Uint8Array {
  const { width, height, runs } = rle;
  if (width < 1 || height < 1) {
    throw new Error(`mask dimensions must be positive, got ${width}x${height}`);
  }
  if (runs.length === 0) {
    throw new Error("empty run list");
  }
  let total = 0;
  for (let i = 0; i < runs.length; i++) {
    const run = runs[i];
    if (!Number.isInteger(run) || run < 0) {
      throw new Error(`runs must be non-negative integers, got ${run}`);
    }
    if (run === 0 && i > 0) {
      throw new Error("interior zero-length run");
    }
    total += run;
  }
  if (total !== width * height) {
    throw new Error(`runs sum to ${total}, expected ${width * height}`);
  }
  const out = new Uint8Array(width * height);
  let offset = 0;
  let value = 0;
  for (const run of runs) {
    if (value) out.fill(1, offset, offset + run);
    offset += run;
    value ^= 1;
  }
  return out;
}
