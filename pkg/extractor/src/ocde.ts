/**
 * OCDE v1 binary dataset writer/reader, byte-compatible with the engine.
 *
 * Layout (little-endian):
 *   header: magic "OCDE", uint32 version=1, uint32 d, uint32 n,
 *           uint32 views_per_sample, uint8 has_labels, 3 pad bytes
 *   record: int64 id, [int32 label], float32 views[views_per_sample][d]
 */
import { readFileSync, writeFileSync } from "fs";

export interface DatasetRecord {
  id: number;
  label?: number;
  views: Float64Array[]; // equal-length vectors
}

const MAGIC = Buffer.from("OCDE", "ascii");
const VERSION = 1;
const HEADER_SIZE = 24;

export function encodeDataset(records: DatasetRecord[]): Buffer {
  if (records.length === 0) throw new Error("refusing to write an empty dataset");
  const d = records[0].views[0].length;
  const viewsPerSample = records[0].views.length;
  const hasLabels = records[0].label !== undefined;
  for (const r of records) {
    if (r.views.length !== viewsPerSample || r.views.some((v) => v.length !== d)) {
      throw new Error(`record ${r.id}: inconsistent view shape`);
    }
    if ((r.label !== undefined) !== hasLabels) {
      throw new Error(`record ${r.id}: inconsistent label presence`);
    }
  }
  const stride = 8 + (hasLabels ? 4 : 0) + 4 * viewsPerSample * d;
  const buf = Buffer.alloc(HEADER_SIZE + stride * records.length);
  MAGIC.copy(buf, 0);
  buf.writeUInt32LE(VERSION, 4);
  buf.writeUInt32LE(d, 8);
  buf.writeUInt32LE(records.length, 12);
  buf.writeUInt32LE(viewsPerSample, 16);
  buf.writeUInt8(hasLabels ? 1 : 0, 20);

  let pos = HEADER_SIZE;
  for (const r of records) {
    buf.writeBigInt64LE(BigInt(r.id), pos);
    pos += 8;
    if (hasLabels) {
      buf.writeInt32LE(r.label!, pos);
      pos += 4;
    }
    for (const view of r.views) {
      for (let i = 0; i < d; i++) {
        buf.writeFloatLE(view[i], pos);
        pos += 4;
      }
    }
  }
  return buf;
}

export function writeDataset(path: string, records: DatasetRecord[]): void {
  writeFileSync(path, encodeDataset(records));
}

export function decodeDataset(buf: Buffer): DatasetRecord[] {
  if (buf.length < HEADER_SIZE || !buf.subarray(0, 4).equals(MAGIC)) {
    throw new Error("not an OCDE file");
  }
  const version = buf.readUInt32LE(4);
  if (version !== VERSION) throw new Error(`unsupported OCDE version ${version}`);
  const d = buf.readUInt32LE(8);
  const n = buf.readUInt32LE(12);
  const viewsPerSample = buf.readUInt32LE(16);
  const hasLabels = buf.readUInt8(20) === 1;
  const stride = 8 + (hasLabels ? 4 : 0) + 4 * viewsPerSample * d;
  if (buf.length !== HEADER_SIZE + stride * n) {
    throw new Error(`truncated OCDE payload: ${buf.length} bytes`);
  }
  const records: DatasetRecord[] = [];
  let pos = HEADER_SIZE;
  for (let r = 0; r < n; r++) {
    const id = Number(buf.readBigInt64LE(pos));
    pos += 8;
    let label: number | undefined;
    if (hasLabels) {
      label = buf.readInt32LE(pos);
      pos += 4;
    }
    const views: Float64Array[] = [];
    for (let v = 0; v < viewsPerSample; v++) {
      const view = new Float64Array(d);
      for (let i = 0; i < d; i++) {
        view[i] = buf.readFloatLE(pos);
        pos += 4;
      }
      views.push(view);
    }
    records.push({ id, label, views });
  }
  return records;
}

export function readDataset(path: string): DatasetRecord[] {
  return decodeDataset(readFileSync(path));
}
