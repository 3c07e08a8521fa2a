import * as fs from "fs";
import * as path from "path";
import { crc32 } from "zlib";

export class WriteError extends Error {}
export class CorruptRecord extends Error {}

export const MMEC_VERSION = 1;
const MAGIC = "MMEC";

export interface EmbeddingRecord {
  sampleId: string;
  layerOffset: number; // k-th-from-last hidden layer
  rows: number; // S tokens
  cols: number; // d_m
  data: Float32Array; // row-major S * d_m
}

export function sanitizeId(sampleId: string): string {
  return sampleId.replace(/[^A-Za-z0-9._-]/g, "_");
}

export function recordPath(cacheDir: string, sampleId: string): string {
  return path.join(cacheDir, sanitizeId(sampleId) + ".emb");
}

export function encodeRecord(rec: EmbeddingRecord): Buffer {
  if (rec.data.length !== rec.rows * rec.cols) {
    throw new WriteError(
      `payload has ${rec.data.length} floats, header says ${rec.rows}x${rec.cols}`,
    );
  }
  for (const v of rec.data) {
    if (!Number.isFinite(v)) {
      throw new WriteError("embedding payload must be finite");
    }
  }
  const idBytes = Buffer.from(rec.sampleId, "utf-8");
  const payload = Buffer.alloc(rec.data.length * 4);
  for (let i = 0; i < rec.data.length; i++) {
    payload.writeFloatLE(rec.data[i], i * 4);
  }
  const head = Buffer.alloc(18);
  head.write(MAGIC, 0, "latin1");
  head.writeUInt16LE(MMEC_VERSION, 4);
  head.writeUInt16LE(rec.layerOffset, 6);
  head.writeUInt32LE(rec.rows, 8);
  head.writeUInt32LE(rec.cols, 12);
  head.writeUInt16LE(idBytes.length, 16);
  const tail = Buffer.alloc(4);
  tail.writeUInt32LE(crc32(payload) >>> 0, 0);
  return Buffer.concat([head, idBytes, payload, tail]);
}

/** Write one record atomically: temp file in the same dir, then rename. */
export function writeRecord(cacheDir: string, rec: EmbeddingRecord): string {
  const target = recordPath(cacheDir, rec.sampleId);
  const tmp = target + ".tmp." + process.pid;
  fs.writeFileSync(tmp, encodeRecord(rec));
  fs.renameSync(tmp, target);
  return target;
}

/** Parse and checksum-validate a record; used by tests and --validate. */
export function decodeRecord(blob: Buffer, source = "<buffer>"): EmbeddingRecord {
  if (blob.length < 22 || blob.toString("latin1", 0, 4) !== MAGIC) {
    throw new CorruptRecord(`${source}: bad magic`);
  }
  const version = blob.readUInt16LE(4);
  if (version !== MMEC_VERSION) {
    throw new CorruptRecord(`${source}: unsupported version ${version}`);
  }
  const layerOffset = blob.readUInt16LE(6);
  const rows = blob.readUInt32LE(8);
  const cols = blob.readUInt32LE(12);
  const idLen = blob.readUInt16LE(16);
  const payloadStart = 18 + idLen;
  const payloadBytes = rows * cols * 4;
  if (blob.length !== payloadStart + payloadBytes + 4) {
    throw new CorruptRecord(`${source}: truncated payload`);
  }
  const sampleId = blob.toString("utf-8", 18, 18 + idLen);
  const payload = blob.subarray(payloadStart, payloadStart + payloadBytes);
  const stored = blob.readUInt32LE(payloadStart + payloadBytes);
  if ((crc32(payload) >>> 0) !== stored) {
    throw new CorruptRecord(`${source}: checksum mismatch`);
  }
  const data = new Float32Array(rows * cols);
  for (let i = 0; i < data.length; i++) {
    data[i] = payload.readFloatLE(i * 4);
  }
  return { sampleId, layerOffset, rows, cols, data };
}

export function readRecord(filePath: string): EmbeddingRecord {
  return decodeRecord(fs.readFileSync(filePath), filePath);
}
