/**
 * Extraction jobs: walk an image directory, compute one feature row per
 * readable image, and write a single FMAT file atomically.
 */

import { mkdirSync, readFileSync, readdirSync, statSync } from 'fs';
import * as path from 'path';

import { convActivations, denseActivations, CONV_SHAPE, DENSE_SHAPE } from './backbone.js';
import { writeFmatAtomic } from './fmat.js';
import type { FeatureMatrix } from './fmat.js';
import { flattenActivations, gramCosine, gramMatrix } from './features.js';
import { annotPrompt } from './taxonomy.js';
import { embedSentence, getDescriber, EMBED_DIM } from './text.js';

export const FEATURE_KINDS = ['dense', 'gram', 'gram_cosine', 'caption', 'annot'] as const;
export type FeatureKind = (typeof FEATURE_KINDS)[number];

export interface ExtractJob {
  imagesDir: string;
  kind: FeatureKind;
  outPath: string;
  /** images are processed in groups of this size; default 16 */
  batchSize?: number;
  /** advisory placement hint; the built-in backbone always runs on cpu */
  device?: string;
  /** text model name for caption/annot jobs; default 'builtin' */
  textModel?: string;
}

export interface ExtractResult {
  outPath: string;
  rows: number;
  /** ids of images that could not be read and were skipped */
  skipped: string[];
}

export class ExtractError extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'ExtractError';
  }
}

const IMAGE_EXTENSIONS = new Set(['.png', '.jpg', '.jpeg', '.bmp', '.gif', '.webp']);

interface Signature {
  offset: number;
  bytes: number[];
}

// magic numbers; a file whose content matches none of these is unreadable
const SIGNATURES: Signature[] = [
  { offset: 0, bytes: [0x89, 0x50, 0x4e, 0x47] }, // png
  { offset: 0, bytes: [0xff, 0xd8, 0xff] }, // jpeg
  { offset: 0, bytes: [0x42, 0x4d] }, // bmp
  { offset: 0, bytes: [0x47, 0x49, 0x46, 0x38] }, // gif
  { offset: 8, bytes: [0x57, 0x45, 0x42, 0x50] }, // webp (RIFF....WEBP)
];

function looksLikeImage(bytes: Buffer): boolean {
  return SIGNATURES.some(sig =>
    sig.bytes.every((b, i) => bytes.length > sig.offset + i && bytes[sig.offset + i] === b),
  );
}

function listImageFiles(dir: string): string[] {
  let entries: string[];
  try {
    entries = readdirSync(dir);
  } catch (err) {
    throw new ExtractError(`cannot read image directory ${dir}: ${(err as Error).message}`);
  }
  const files = entries
    .filter(name => IMAGE_EXTENSIONS.has(path.extname(name).toLowerCase()))
    .filter(name => statSync(path.join(dir, name)).isFile())
    .sort();
  if (files.length === 0) {
    throw new ExtractError(`no image files in ${dir}`);
  }
  return files;
}

function featureRow(kind: FeatureKind, bytes: Buffer, textModel: string): Float64Array {
  switch (kind) {
    case 'dense':
      return flattenActivations(denseActivations(bytes));
    case 'gram':
      return gramMatrix(convActivations(bytes));
    case 'gram_cosine':
      return gramCosine(convActivations(bytes));
    case 'caption':
      return embedSentence(getDescriber(textModel).caption(bytes));
    case 'annot':
      return embedSentence(getDescriber(textModel).annotate(bytes, annotPrompt()));
  }
}

function outputShape(kind: FeatureKind): { cols: number; dimShape?: number[] } {
  switch (kind) {
    case 'dense': {
      const { channels, height, width } = DENSE_SHAPE;
      return { cols: channels * height * width, dimShape: [channels, height, width] };
    }
    case 'gram':
    case 'gram_cosine': {
      const c = CONV_SHAPE.channels;
      return { cols: c * c, dimShape: [c, c] };
    }
    case 'caption':
    case 'annot':
      return { cols: EMBED_DIM };
  }
}

export function runExtract(
  job: ExtractJob,
  log: (msg: string) => void = msg => process.stderr.write(msg + '\n'),
): ExtractResult {
  if (!FEATURE_KINDS.includes(job.kind)) {
    throw new ExtractError(
      `unknown feature kind '${job.kind}'; expected one of ${FEATURE_KINDS.join(', ')}`,
    );
  }
  const batchSize = job.batchSize ?? 16;
  if (!Number.isInteger(batchSize) || batchSize < 1) {
    throw new ExtractError(`batch size must be a positive integer, got ${job.batchSize}`);
  }
  const textModel = job.textModel ?? 'builtin';
  if (job.kind === 'caption' || job.kind === 'annot') {
    getDescriber(textModel); // fail before any file work if the model is missing
  }

  const files = listImageFiles(job.imagesDir);
  const stems = files.map(f => path.parse(f).name);
  const seen = new Map<string, string>();
  for (let i = 0; i < files.length; i++) {
    const other = seen.get(stems[i]);
    if (other) {
      throw new ExtractError(
        `row ids must be unique within a job: '${files[i]}' and '${other}' share the stem '${stems[i]}'`,
      );
    }
    seen.set(stems[i], files[i]);
  }

  const { cols, dimShape } = outputShape(job.kind);
  const ids: string[] = [];
  const rows: Float64Array[] = [];
  const skipped: string[] = [];
  for (let start = 0; start < files.length; start += batchSize) {
    for (const file of files.slice(start, start + batchSize)) {
      const stem = path.parse(file).name;
      const bytes = readFileSync(path.join(job.imagesDir, file));
      if (bytes.length === 0 || !looksLikeImage(bytes)) {
        skipped.push(stem);
        log(`skipping unreadable image: ${stem}`);
        continue;
      }
      ids.push(stem);
      rows.push(featureRow(job.kind, bytes, textModel));
    }
  }
  if (rows.length === 0) {
    throw new ExtractError(`no readable images in ${job.imagesDir}`);
  }

  const matrix: FeatureMatrix = { ids, rows, cols, dimShape };
  const outDir = path.dirname(job.outPath);
  if (outDir !== '' && outDir !== '.') {
    mkdirSync(outDir, { recursive: true });
  }
  writeFmatAtomic(matrix, job.outPath);
  return { outPath: job.outPath, rows: rows.length, skipped };
}
