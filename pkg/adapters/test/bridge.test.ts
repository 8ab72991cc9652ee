import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { BridgeBackend } from "../src/backends/bridge.js";
import { BackendDownError } from "../src/backends/types.js";
import { parseRequestLine } from "../src/protocol.js";

const REQUEST = parseRequestLine(
  '{"request_id":"b-1","image_path":"ignored.png",' +
    '"points":[],"boxes":[[0.0,0.0,4.0,4.0]],"params":{}}',
);

function stubWorker(body: string): string {
  const dir = mkdtempSync(join(tmpdir(), "bridge-stub-"));
  const path = join(dir, "worker.py");
  writeFileSync(path, body);
  return path;
}

const ECHO_WORKER = `import sys, json
for line in sys.stdin:
    req = json.loads(line)
    reply = {"id": req["id"], "segments": [
        {"rle": {"width": 4, "height": 3, "runs": [2, 4, 6]},
         "score": 0.7, "prompt_index": 0}]}
    sys.stdout.write(json.dumps(reply) + "\\n")
    sys.stdout.flush()
`;

describe("bridge backend", () => {
  it("round-trips segments through a worker subprocess", async () => {
    const backend = new BridgeBackend(["python3", stubWorker(ECHO_WORKER)], 20_000);
    try {
      const segments = await backend.segment(REQUEST);
      expect(segments).toHaveLength(1);
      expect(segments[0].rle).toEqual({ width: 4, height: 3, runs: [2, 4, 6] });
      expect(segments[0].score).toBe(0.7);
      expect(segments[0].promptIndex).toBe(0);
    } finally {
      await backend.close();
    }
  });

  it("serializes concurrent calls through the single worker", async () => {
    const backend = new BridgeBackend(["python3", stubWorker(ECHO_WORKER)], 20_000);
    try {
      const results = await Promise.all([
        backend.segment({ ...REQUEST, request_id: "b-1" }),
        backend.segment({ ...REQUEST, request_id: "b-2" }),
        backend.segment({ ...REQUEST, request_id: "b-3" }),
      ]);
      for (const segments of results) expect(segments).toHaveLength(1);
    } finally {
      await backend.close();
    }
  });

  it("treats worker per-request errors as request failures", async () => {
    const worker = stubWorker(`import sys, json
for line in sys.stdin:
    req = json.loads(line)
    sys.stdout.write(json.dumps({"id": req["id"], "error": "no mask for you"}) + "\\n")
    sys.stdout.flush()
`);
    const backend = new BridgeBackend(["python3", worker], 20_000);
    try {
      await expect(backend.segment(REQUEST)).rejects.toThrow(/no mask for you/);
      await expect(backend.segment(REQUEST)).rejects.not.toBeInstanceOf(BackendDownError);
    } finally {
      await backend.close();
    }
  });

  it("flags a dead worker as a fatal failure with diagnostics", async () => {
    const worker = stubWorker(`import sys
sys.stderr.write("checkpoint missing!\\n")
sys.exit(42)
`);
    const backend = new BridgeBackend(["python3", worker], 20_000);
    try {
      await expect(backend.segment(REQUEST)).rejects.toThrow(BackendDownError);
      await expect(backend.segment(REQUEST)).rejects.toThrow(/checkpoint missing/);
    } finally {
      await backend.close();
    }
  });

  it("flags mismatched reply ids as fatal", async () => {
    const worker = stubWorker(`import sys, json
for line in sys.stdin:
    sys.stdout.write(json.dumps({"id": "wrong", "segments": []}) + "\\n")
    sys.stdout.flush()
`);
    const backend = new BridgeBackend(["python3", worker], 20_000);
    try {
      await expect(backend.segment(REQUEST)).rejects.toThrow(BackendDownError);
    } finally {
      await backend.close();
    }
  });
});
