import * as fs from "fs";

export class InputFormatError extends Error {}

export interface Mmi1Tensor {
  dims: [number, number, number];
  data: Float64Array; // row-major, dims[0]*dims[1]*dims[2]
}

const MAGIC = "MMI1";

/** Read a portable tensor file: magic, three LE u32 dims, row-major f32. */
export function readMmi1(path: string): Mmi1Tensor {
  const buf = fs.readFileSync(path);
  if (buf.length < 16 || buf.toString("latin1", 0, 4) !== MAGIC) {
    throw new InputFormatError(`${path}: not an MMI1 tensor file`);
  }
  const dims: [number, number, number] = [
    buf.readUInt32LE(4),
    buf.readUInt32LE(8),
    buf.readUInt32LE(12),
  ];
  const count = dims[0] * dims[1] * dims[2];
  if (buf.length !== 16 + count * 4) {
    throw new InputFormatError(`${path}: payload length mismatch`);
  }
  const data = new Float64Array(count);
  for (let i = 0; i < count; i++) {
    data[i] = buf.readFloatLE(16 + i * 4);
  }
  return { dims, data };
}
