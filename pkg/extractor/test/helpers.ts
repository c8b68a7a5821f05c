import { execFileSync } from 'child_process';
import { mkdtempSync } from 'fs';
import { tmpdir } from 'os';
import * as path from 'path';

/**
 * Minimal 24-bit BMP encoder so tests can fabricate small valid images.
 * `pixels` is one (b, g, r) byte triple per pixel, rows bottom-up.
 */
export function bmpBytes(width: number, height: number, pixels: number[]): Buffer {
  const rowBytes = width * 3;
  const padded = Math.ceil(rowBytes / 4) * 4;
  const imageSize = padded * height;
  const fileSize = 54 + imageSize;
  const buf = Buffer.alloc(fileSize);
  buf.write('BM', 0, 'ascii');
  buf.writeUInt32LE(fileSize, 2);
  buf.writeUInt32LE(54, 10);
  buf.writeUInt32LE(40, 14);
  buf.writeInt32LE(width, 18);
  buf.writeInt32LE(height, 22);
  buf.writeUInt16LE(1, 26);
  buf.writeUInt16LE(24, 28);
  buf.writeUInt32LE(imageSize, 34);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < rowBytes; x++) {
      buf[54 + y * padded + x] = pixels[y * rowBytes + x] ?? 0;
    }
  }
  return buf;
}

export function tempDir(prefix: string): string {
  return mkdtempSync(path.join(tmpdir(), prefix));
}

export interface EngineReport {
  rows: number;
  cols: number;
  ids: string[];
  dim_shape: number[] | null;
  gap_cols?: number;
}

/** Validate an FMAT file with the clustering engine's reader and pooling. */
export function engineCheck(file: string): EngineReport {
  const script = [
    'import json, sys',
    'from decluster.tensor_io import read_fmat',
    'from decluster.reduce import gap',
    'm = read_fmat(sys.argv[1])',
    'out = {"rows": m.n, "cols": m.d, "ids": list(m.ids), "dim_shape": m.dim_shape}',
    'if m.dim_shape is not None and len(m.dim_shape) >= 2:',
    '    out["gap_cols"] = gap(m).d',
    'print(json.dumps(out))',
  ].join('\n');
  const stdout = execFileSync('python3', ['-c', script, file], { encoding: 'utf-8' });
  return JSON.parse(stdout) as EngineReport;
}

/** Read an FMAT file's values back through the engine's reader. */
export function engineValues(file: string): number[][] {
  const script = [
    'import json, sys',
    'from decluster.tensor_io import read_fmat',
    'print(json.dumps(read_fmat(sys.argv[1]).data.tolist()))',
  ].join('\n');
  const stdout = execFileSync('python3', ['-c', script, file], { encoding: 'utf-8' });
  return JSON.parse(stdout) as number[][];
}
