/**
 * FMAT v1 interchange format, byte-compatible with the clustering engine.
 *
 * Layout (all integers little-endian):
 *
 *   magic "FMAT" (4 bytes)
 *   version     u32 = 1
 *   rows        u64
 *   cols        u64
 *   flags       u32   (bit0: dim_shape block present; other bits reserved)
 *   [if bit0]   ndims u32, then ndims x u64 dims (product must equal cols)
 *   payload     rows x cols little-endian f32, row-major
 *   string table: rows x (u32 byte length + UTF-8 id bytes)
 */

import { readFileSync, renameSync, writeFileSync } from 'fs';

const MAGIC = 'FMAT';
const VERSION = 1;
const FLAG_DIM_SHAPE = 1;
const F32_MAX = 3.4028234663852886e38;

export interface FeatureMatrix {
  ids: string[];
  /** one Float64Array per row, all the same length */
  rows: Float64Array[];
  cols: number;
  /** per-row tensor shape before flattening, e.g. [1024, 7, 7] */
  dimShape?: number[];
}

export class FmatError extends Error {
  constructor(
    public code: string,
    message: string,
  ) {
    super(message);
    this.name = 'FmatError';
  }
}

function validate(matrix: FeatureMatrix): void {
  const { ids, rows, cols, dimShape } = matrix;
  if (ids.length !== rows.length) {
    throw new FmatError('bad_shape', `${ids.length} ids for ${rows.length} rows`);
  }
  if (new Set(ids).size !== ids.length) {
    throw new FmatError('duplicate_id', 'sample ids are not unique');
  }
  for (let i = 0; i < rows.length; i++) {
    if (rows[i].length !== cols) {
      throw new FmatError('bad_shape', `row ${i} has ${rows[i].length} values, expected ${cols}`);
    }
  }
  if (dimShape !== undefined) {
    if (dimShape.length < 1 || dimShape.some(s => !Number.isInteger(s) || s < 1)) {
      throw new FmatError('bad_dim_shape', `invalid dims ${JSON.stringify(dimShape)}`);
    }
    const product = dimShape.reduce((a, b) => a * b, 1);
    if (product !== cols) {
      throw new FmatError(
        'bad_dim_shape',
        `dims ${JSON.stringify(dimShape)} do not flatten to ${cols} columns`,
      );
    }
  }
}

export function encodeFmat(matrix: FeatureMatrix): Buffer {
  validate(matrix);
  const { ids, rows, cols, dimShape } = matrix;
  const n = rows.length;
  const dimsLen = dimShape ? 4 + 8 * dimShape.length : 0;
  const idBytes = ids.map(id => Buffer.from(id, 'utf-8'));
  const tableLen = idBytes.reduce((a, b) => a + 4 + b.length, 0);
  const buf = Buffer.alloc(4 + 4 + 8 + 8 + 4 + dimsLen + n * cols * 4 + tableLen);

  let pos = buf.write(MAGIC, 0, 'ascii');
  pos = buf.writeUInt32LE(VERSION, pos);
  pos = buf.writeBigUInt64LE(BigInt(n), pos);
  pos = buf.writeBigUInt64LE(BigInt(cols), pos);
  pos = buf.writeUInt32LE(dimShape ? FLAG_DIM_SHAPE : 0, pos);
  if (dimShape) {
    pos = buf.writeUInt32LE(dimShape.length, pos);
    for (const s of dimShape) pos = buf.writeBigUInt64LE(BigInt(s), pos);
  }
  for (const row of rows) {
    for (let j = 0; j < cols; j++) {
      const v = row[j];
      // values are stored as f32; reject anything that cannot survive that
      if (!Number.isFinite(v) || Math.abs(v) > F32_MAX) {
        throw new FmatError('non_finite', 'values exceed f32 range; refusing to write');
      }
      pos = buf.writeFloatLE(v, pos);
    }
  }
  for (const raw of idBytes) {
    pos = buf.writeUInt32LE(raw.length, pos);
    pos += raw.copy(buf, pos);
  }
  return buf;
}

class Cursor {
  pos = 0;
  constructor(private buf: Buffer) {}

  take(n: number): Buffer {
    if (this.pos + n > this.buf.length) {
      throw new FmatError('truncated', `file ends ${this.pos + n - this.buf.length} bytes early`);
    }
    const out = this.buf.subarray(this.pos, this.pos + n);
    this.pos += n;
    return out;
  }

  u32(): number {
    return this.take(4).readUInt32LE(0);
  }

  u64(): number {
    const v = this.take(8).readBigUInt64LE(0);
    if (v > BigInt(Number.MAX_SAFE_INTEGER)) {
      throw new FmatError('bad_shape', `size field ${v} is out of range`);
    }
    return Number(v);
  }

  done(buf: Buffer): void {
    if (this.pos !== buf.length) {
      throw new FmatError('trailing_data', `${buf.length - this.pos} unexpected trailing bytes`);
    }
  }
}

export function decodeFmat(buf: Buffer): FeatureMatrix {
  const cur = new Cursor(buf);
  if (cur.take(4).toString('ascii') !== MAGIC) {
    throw new FmatError('bad_magic', 'not an FMAT file');
  }
  const version = cur.u32();
  if (version !== VERSION) {
    throw new FmatError('bad_version', `unsupported FMAT version ${version}`);
  }
  const n = cur.u64();
  const cols = cur.u64();
  const flags = cur.u32();
  if (flags & ~FLAG_DIM_SHAPE) {
    throw new FmatError('bad_flags', `unknown flag bits 0x${flags.toString(16)}`);
  }
  let dimShape: number[] | undefined;
  if (flags & FLAG_DIM_SHAPE) {
    const ndims = cur.u32();
    const dims: number[] = [];
    for (let i = 0; i < ndims; i++) dims.push(cur.u64());
    if (ndims < 1 || dims.some(s => s < 1)) {
      throw new FmatError('bad_dim_shape', `invalid dims ${JSON.stringify(dims)}`);
    }
    if (dims.reduce((a, b) => a * b, 1) !== cols) {
      throw new FmatError('bad_dim_shape', `dims ${JSON.stringify(dims)} do not flatten to ${cols} columns`);
    }
    dimShape = dims;
  }
  const rows: Float64Array[] = [];
  for (let i = 0; i < n; i++) {
    const raw = cur.take(cols * 4);
    const row = new Float64Array(cols);
    for (let j = 0; j < cols; j++) {
      const v = raw.readFloatLE(j * 4);
      if (!Number.isFinite(v)) {
        throw new FmatError('non_finite', 'payload contains NaN or Inf');
      }
      row[j] = v;
    }
    rows.push(row);
  }
  const ids: string[] = [];
  for (let i = 0; i < n; i++) {
    const length = cur.u32();
    ids.push(cur.take(length).toString('utf-8'));
  }
  cur.done(buf);
  if (new Set(ids).size !== ids.length) {
    throw new FmatError('duplicate_id', 'sample ids are not unique');
  }
  return { ids, rows, cols, dimShape };
}

export function readFmat(path: string): FeatureMatrix {
  return decodeFmat(readFileSync(path));
}

/** Write once, atomically: encode to a sibling temp file, then rename. */
export function writeFmatAtomic(matrix: FeatureMatrix, path: string): void {
  const tmp = `${path}.tmp-${process.pid}`;
  writeFileSync(tmp, encodeFmat(matrix));
  renameSync(tmp, path);
}
