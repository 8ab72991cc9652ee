import { promises as fs } from "node:fs";

const PNG_SIGNATURE = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);

/** Read width/height from a PNG IHDR without decoding pixel data. */
export async function pngDimensions(path: string): Promise<{ width: number; height: number }> {
  let handle;
  try {
    handle = await fs.open(path, "r");
  } catch {
    throw new Error(`cannot open tile image: ${path}`);
  }
  try {
    const header = Buffer.alloc(24);
    const { bytesRead } = await handle.read(header, 0, 24, 0);
    if (bytesRead < 24 || !header.subarray(0, 8).equals(PNG_SIGNATURE)) {
      throw new Error(`not a PNG file: ${path}`);
    }
    return { width: header.readUInt32BE(16), height: header.readUInt32BE(20) };
  } finally {
    await handle.close();
  }
}
