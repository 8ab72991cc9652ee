import { spawn, type ChildProcessWithoutNullStreams } from "node:child_process";
import { createInterface, type Interface } from "node:readline";

import { rleSchema } from "../protocol.js";
import type { PredictorRequest } from "../protocol.js";
import { BackendDownError, type ModelBackend, type SegmentOut } from "./types.js";
import { z } from "zod";

const bridgeResponseSchema = z.object({
  id: z.string(),
  error: z.string().optional(),
  segments: z
    .array(
      z.object({
        rle: rleSchema,
        score: z.number(),
        prompt_index: z.number().int().nullable().default(null),
      }),
    )
    .default([]),
});

/**
 * Hosts the real model in a Python worker subprocess (SAM2 and
 * DeepForest are Python runtimes) and exchanges one JSON line per
 * request. The worker is strictly serial; requests are matched by id.
 */
export class BridgeBackend implements ModelBackend {
  readonly identity: string;
  private proc: ChildProcessWithoutNullStreams;
  private lines: Interface;
  private stderrTail: string[] = [];
  private pending: Promise<unknown> = Promise.resolve();
  private outputClosed = false;
  private readonly timeoutMs: number;

  constructor(command: string[], timeoutMs = 300_000) {
    this.identity = command.join(" ");
    this.timeoutMs = timeoutMs;
    this.proc = spawn(command[0], command.slice(1), {
      stdio: ["pipe", "pipe", "pipe"],
    });
    this.proc.on("error", () => {
      /* surfaced as BackendDownError on use */
    });
    this.proc.stdin.on("error", () => {
      /* EPIPE from a dead worker; surfaced as BackendDownError on use */
    });
    this.lines = createInterface({ input: this.proc.stdout });
    this.lines.on("close", () => {
      this.outputClosed = true;
    });
    this.proc.stderr.on("data", (chunk: Buffer) => {
      for (const line of chunk.toString().split("\n")) {
        if (line.trim()) {
          this.stderrTail.push(line);
          if (this.stderrTail.length > 50) this.stderrTail.shift();
        }
      }
    });
  }

  private diagnostics(): string {
    const tail = this.stderrTail.join("\n") || "<no stderr output>";
    return `bridge ${this.identity}; stderr tail:\n${tail}`;
  }

  private readLine(): Promise<string> {
    return new Promise<string>((resolve, reject) => {
      if (this.outputClosed) {
        reject(new BackendDownError(`bridge closed its output: ${this.diagnostics()}`));
        return;
      }
      const timer = setTimeout(() => {
        cleanup();
        this.proc.kill();
        reject(new BackendDownError(`bridge timed out after ${this.timeoutMs}ms: ${this.diagnostics()}`));
      }, this.timeoutMs);
      const onLine = (line: string) => {
        cleanup();
        resolve(line);
      };
      const onClose = () => {
        cleanup();
        reject(new BackendDownError(`bridge closed its output: ${this.diagnostics()}`));
      };
      const cleanup = () => {
        clearTimeout(timer);
        this.lines.off("line", onLine);
        this.lines.off("close", onClose);
      };
      this.lines.once("line", onLine);
      this.lines.once("close", onClose);
    });
  }

  async segment(req: PredictorRequest): Promise<SegmentOut[]> {
    // serialize calls: the worker handles one request at a time
    const run = this.pending.then(async () => {
      if (this.proc.exitCode !== null) {
        throw new BackendDownError(`bridge exited with code ${this.proc.exitCode}: ${this.diagnostics()}`);
      }
      const line = JSON.stringify({
        id: req.request_id,
        image_path: req.image_path,
        points: req.points,
        boxes: req.boxes,
        params: req.params,
      });
      let ok = false;
      try {
        ok = this.proc.stdin.write(line + "\n");
      } catch {
        throw new BackendDownError(`bridge stdin is closed: ${this.diagnostics()}`);
      }
      if (!ok && !this.outputClosed && this.proc.exitCode === null) {
        // backpressure, or a dying worker whose exit we have not seen yet
        await new Promise<void>((resolve) => {
          const done = () => {
            this.proc.stdin.off("drain", done);
            this.lines.off("close", done);
            resolve();
          };
          this.proc.stdin.once("drain", done);
          this.lines.once("close", done);
        });
      }
      const replyText = await this.readLine();
      let reply;
      try {
        reply = bridgeResponseSchema.parse(JSON.parse(replyText));
      } catch (e) {
        throw new BackendDownError(
          `bridge produced an unreadable reply (${(e as Error).message}): ${this.diagnostics()}`,
        );
      }
      if (reply.id !== req.request_id) {
        throw new BackendDownError(
          `bridge answered ${reply.id}, expected ${req.request_id}: ${this.diagnostics()}`,
        );
      }
      if (reply.error) {
        throw new Error(reply.error);
      }
      return reply.segments.map((s) => ({
        rle: s.rle,
        score: s.score,
        promptIndex: s.prompt_index,
      }));
    });
    this.pending = run.catch(() => undefined);
    return run;
  }

  async close(): Promise<void> {
    this.proc.stdin.end();
    await new Promise<void>((resolve) => {
      const timer = setTimeout(() => {
        this.proc.kill();
        resolve();
      }, 3000);
      this.proc.once("exit", () => {
        clearTimeout(timer);
        resolve();
      });
    });
  }
}
