/**
 * SAM2 adapter: serves the predictor protocol over stdin/stdout with a
 * pretrained SAM2 model hosted in a Python worker (automatic
 * point-grid mask generation, or box-prompted segmentation).
 *
 *   adapter-sam2 --checkpoint sam2_hiera_large.pt --mode auto
 *   adapter-sam2 --checkpoint sam2_hiera_large.pt --mode box --device cuda
 *
 * `--backend mock` swaps in the deterministic test backend (no model,
 * no checkpoint needed).
 */

import { existsSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { parseArgs } from "node:util";

import { BridgeBackend } from "./backends/bridge.js";
import { MockBackend } from "./backends/mock.js";
import type { ModelBackend } from "./backends/types.js";
import { serveProtocol } from "./server.js";

function workerPath(name: string): string {
  return fileURLToPath(new URL(`../py/${name}`, import.meta.url));
}

export async function runSam2(argv: string[]): Promise<number> {
  let args;
  try {
    args = parseArgs({
      args: argv,
      options: {
        checkpoint: { type: "string" },
        "model-config": { type: "string" },
        mode: { type: "string", default: "auto" },
        device: { type: "string", default: "cpu" },
        "points-per-side": { type: "string" },
        backend: { type: "string", default: "bridge" },
        python: { type: "string", default: "python3" },
        "timeout-s": { type: "string", default: "300" },
      },
    }).values;
  } catch (e) {
    process.stderr.write(`adapter-sam2: ${(e as Error).message}\n`);
    return 2;
  }
  if (args.mode !== "auto" && args.mode !== "box") {
    process.stderr.write(`adapter-sam2: --mode must be auto or box, got ${args.mode}\n`);
    return 2;
  }

  let backend: ModelBackend;
  if (args.backend === "mock") {
    backend = new MockBackend();
  } else if (args.backend === "bridge") {
    if (!args.checkpoint) {
      process.stderr.write("adapter-sam2: --checkpoint is required\n");
      return 2;
    }
    if (!existsSync(args.checkpoint)) {
      process.stderr.write(
        `adapter-sam2: checkpoint not found: ${args.checkpoint} ` +
          "(download a SAM2 checkpoint and pass its path)\n",
      );
      return 2;
    }
    const command = [
      args.python,
      workerPath("sam2_worker.py"),
      "--checkpoint", args.checkpoint,
      "--mode", args.mode,
      "--device", args.device,
    ];
    if (args["model-config"]) command.push("--model-config", args["model-config"]);
    if (args["points-per-side"]) command.push("--points-per-side", args["points-per-side"]);
    backend = new BridgeBackend(command, Number(args["timeout-s"]) * 1000);
  } else {
    process.stderr.write(`adapter-sam2: unknown backend ${args.backend}\n`);
    return 2;
  }

  try {
    await serveProtocol(process.stdin, process.stdout, backend);
    return 0;
  } catch (e) {
    process.stderr.write(`adapter-sam2: fatal: ${(e as Error).message}\n`);
    return 1;
  } finally {
    await backend.close();
  }
}

if (import.meta.url === `file://${process.argv[1]}`) {
  runSam2(process.argv.slice(2)).then((code) => process.exit(code));
}
