import { promises as fs } from "node:fs";

export const CSV_HEADER = "image_id,xmin,ymin,xmax,ymax,score";

export interface BoxRow {
  imageId: string;
  xmin: number;
  ymin: number;
  xmax: number;
  ymax: number;
  score: number;
}

/** Render a number like Python's "%.9g" so both lanes emit identical CSV. */
export function formatReal(v: number): string {
  if (Number.isInteger(v) && Math.abs(v) < 1e15) return String(v);
  let text = v.toPrecision(9);
  if (text.includes(".") && !text.includes("e") && !text.includes("E")) {
    text = text.replace(/0+$/, "").replace(/\.$/, "");
  }
  return text;
}

export async function writeBoxCsv(path: string, rows: BoxRow[]): Promise<void> {
  const lines = [CSV_HEADER];
  for (const r of rows) {
    lines.push(
      [
        r.imageId,
        formatReal(r.xmin),
        formatReal(r.ymin),
        formatReal(r.xmax),
        formatReal(r.ymax),
        formatReal(r.score),
      ].join(","),
    );
  }
  await fs.writeFile(path, lines.join("\n") + "\n", "utf-8");
}
