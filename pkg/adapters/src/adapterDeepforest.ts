/**
 * DeepForest adapter: runs the pretrained tree crown detector on one
 * image and writes its boxes as `image_id,xmin,ymin,xmax,ymax,score`
 * CSV in the pixel frame, ready for box-prompt transfer.
 *
 *   adapter-deepforest --image scene.png --out boxes.csv
 *
 * `--mock` writes a deterministic placeholder box (no model needed).
 */

import { spawn } from "node:child_process";
import { existsSync } from "node:fs";
import { basename, extname } from "node:path";
import { fileURLToPath } from "node:url";
import { parseArgs } from "node:util";

import { pngDimensions } from "./pngHeader.js";
import { writeBoxCsv } from "./csv.js";

function workerPath(): string {
  return fileURLToPath(new URL("../py/deepforest_worker.py", import.meta.url));
}

export async function runDeepforest(argv: string[]): Promise<number> {
  let args;
  try {
    args = parseArgs({
      args: argv,
      options: {
        image: { type: "string" },
        out: { type: "string" },
        "image-id": { type: "string" },
        mock: { type: "boolean", default: false },
        python: { type: "string", default: "python3" },
      },
    }).values;
  } catch (e) {
    process.stderr.write(`adapter-deepforest: ${(e as Error).message}\n`);
    return 2;
  }
  if (!args.image || !args.out) {
    process.stderr.write("adapter-deepforest: --image and --out are required\n");
    return 2;
  }
  if (!existsSync(args.image)) {
    process.stderr.write(`adapter-deepforest: image not found: ${args.image}\n`);
    return 3;
  }
  const imageId = args["image-id"] ?? basename(args.image, extname(args.image));

  if (args.mock) {
    const { width, height } = await pngDimensions(args.image);
    await writeBoxCsv(args.out, [
      {
        imageId,
        xmin: Math.floor(width * 0.1),
        ymin: Math.floor(height * 0.1),
        xmax: Math.ceil(width * 0.9),
        ymax: Math.ceil(height * 0.9),
        score: 0.9,
      },
    ]);
    return 0;
  }

  const code = await new Promise<number>((resolve) => {
    const proc = spawn(
      args.python!,
      [workerPath(), "--image", args.image!, "--out", args.out!, "--image-id", imageId],
      { stdio: ["ignore", "inherit", "inherit"] },
    );
    proc.on("error", () => resolve(127));
    proc.on("exit", (c) => resolve(c ?? 1));
  });
  if (code === 42) {
    process.stderr.write(
      "adapter-deepforest: the deepforest package is not installed " +
        "(pip install deepforest)\n",
    );
  }
  return code;
}

if (import.meta.url === `file://${process.argv[1]}`) {
  runDeepforest(process.argv.slice(2)).then((code) => process.exit(code));
}
