/**
 * Conformance of the real-model adapters, exercised only when the
 * model runtimes and weights are present (skipped, not failed,
 * otherwise). CANOPY_SAM2_CHECKPOINT must point at a SAM2 checkpoint.
 */

import { spawnSync } from "node:child_process";
import { existsSync, mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import { BridgeBackend } from "../src/backends/bridge.js";
import { parseRequestLine, responseSchema, serializeResponse } from "../src/protocol.js";
import { answerRequest } from "../src/server.js";
import { runDeepforest } from "../src/adapterDeepforest.js";
import { CSV_HEADER } from "../src/csv.js";

const goldenDir = fileURLToPath(new URL("../../golden/", import.meta.url));
const workerDir = fileURLToPath(new URL("../py/", import.meta.url));

const pythonHas = (module: string) =>
  spawnSync("python3", ["-c", `import ${module}`]).status === 0;

const sam2Checkpoint = process.env.CANOPY_SAM2_CHECKPOINT ?? "";
const sam2Ready = pythonHas("sam2") && sam2Checkpoint !== "" && existsSync(sam2Checkpoint);
const deepforestReady = pythonHas("deepforest");

function goldenRequest(): ReturnType<typeof parseRequestLine> {
  const doc = JSON.parse(readFileSync(join(goldenDir, "predictor_request.jsonl"), "utf-8"));
  doc.image_path = join(goldenDir, "tile.png");
  return parseRequestLine(JSON.stringify(doc));
}

describe.skipIf(!sam2Ready)("sam2 adapter with real weights", () => {
  it("answers the golden request with a schema-valid response", async () => {
    const backend = new BridgeBackend(
      [
        "python3",
        join(workerDir, "sam2_worker.py"),
        "--checkpoint", sam2Checkpoint,
        "--mode", "box",
        "--device", "cpu",
      ],
      600_000,
    );
    try {
      const resp = await answerRequest(backend, goldenRequest());
      const parsed = responseSchema.parse(JSON.parse(serializeResponse(resp)));
      expect(parsed.segments.length).toBeGreaterThan(0);
      for (const seg of parsed.segments) {
        expect(seg.rle.width).toBe(64);
        expect(seg.rle.height).toBe(64);
        expect(seg.prompt_index).not.toBeNull();
      }
    } finally {
      await backend.close();
    }
  }, 600_000);
});

describe.skipIf(!deepforestReady)("deepforest adapter with the released model", () => {
  it("writes CSV that parses under detections-io", async () => {
    const out = join(mkdtempSync(join(tmpdir(), "df-real-")), "boxes.csv");
    const code = await runDeepforest([
      "--image", join(goldenDir, "tile.png"),
      "--out", out,
    ]);
    expect(code).toBe(0);
    const lines = readFileSync(out, "utf-8").trim().split("\n");
    expect(lines[0]).toBe(CSV_HEADER);
    if (pythonHas("canopy")) {
      const probe = spawnSync("python3", [
        "-c",
        "import sys\n" +
          "from canopy.detections_io import read_csv_detections\n" +
          "read_csv_detections(sys.argv[1])\n" +
          "print('ok')\n",
        out,
      ]);
      expect(probe.status).toBe(0);
    }
  }, 600_000);
});
