/**
 * Deterministic stand-in backbone.
 *
 * No pretrained network weights ship with this package, so activation
 * tensors are synthesized from the image bytes themselves: a per-image
 * content descriptor (chunked byte statistics plus a digest) is pushed
 * through a fixed random projection with a relu, giving tensors with the
 * same shapes, non-negativity, and eval-mode determinism a convolutional
 * feature extractor would produce. Everything downstream (pooling, Gram
 * and cosine matrices) is computed from these tensors for real.
 *
 * Swapping in a real model means replacing `denseActivations` and
 * `convActivations`; the checkpoint is configuration, not contract.
 */

import { createHash } from 'crypto';

export interface ActivationTensor {
  channels: number;
  height: number;
  width: number;
  /** channel-major: data[c * height * width + y * width + x] */
  data: Float64Array;
}

export const DENSE_SHAPE = { channels: 1024, height: 7, width: 7 } as const;
export const CONV_SHAPE = { channels: 512, height: 7, width: 7 } as const;

const SEGMENTS = 64;
const DIGEST_TERMS = 32;
/** descriptor length: 4 byte-statistics per segment plus digest terms */
export const DESCRIPTOR_LEN = SEGMENTS * 4 + DIGEST_TERMS;

function fnv1a32(text: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h >>> 0;
}

/** mulberry32: tiny deterministic PRNG, used only to generate fixed weights */
function rngFromLabel(label: string): () => number {
  let state = fnv1a32(label) >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function uniformWeights(label: string, count: number, scale: number): Float64Array {
  const rng = rngFromLabel(label);
  const out = new Float64Array(count);
  for (let i = 0; i < count; i++) out[i] = (2 * rng() - 1) * scale;
  return out;
}

/**
 * Per-image content descriptor: mean/std/min/max of byte values over 64
 * equal segments, plus 32 values derived from the SHA-256 digest so that
 * any byte difference separates two images even when their segment
 * statistics coincide.
 */
export function descriptor(bytes: Buffer): Float64Array {
  const out = new Float64Array(DESCRIPTOR_LEN);
  const n = bytes.length;
  for (let s = 0; s < SEGMENTS; s++) {
    const lo = Math.floor((s * n) / SEGMENTS);
    const hi = Math.max(lo + 1, Math.floor(((s + 1) * n) / SEGMENTS));
    let sum = 0;
    let sumSq = 0;
    let min = 255;
    let max = 0;
    for (let i = lo; i < hi && i < n; i++) {
      const b = bytes[i];
      sum += b;
      sumSq += b * b;
      if (b < min) min = b;
      if (b > max) max = b;
    }
    const count = Math.min(hi, n) - lo;
    const mean = sum / count;
    const variance = Math.max(0, sumSq / count - mean * mean);
    out[s * 4] = mean / 255;
    out[s * 4 + 1] = Math.sqrt(variance) / 255;
    out[s * 4 + 2] = min / 255;
    out[s * 4 + 3] = max / 255;
  }
  const digest = createHash('sha256').update(bytes).digest();
  for (let i = 0; i < DIGEST_TERMS; i++) {
    out[SEGMENTS * 4 + i] = digest[i] / 127.5 - 1;
  }
  return out;
}

interface ProjectionWeights {
  channel: Float64Array; // channels x DESCRIPTOR_LEN
  spatial: Float64Array; // (height * width) x DESCRIPTOR_LEN
  bias: Float64Array; // channels
}

const weightCache = new Map<string, ProjectionWeights>();

function projectionWeights(label: string, channels: number, spatial: number): ProjectionWeights {
  const key = `${label}/${channels}x${spatial}`;
  let w = weightCache.get(key);
  if (!w) {
    const scale = 1 / Math.sqrt(DESCRIPTOR_LEN);
    w = {
      channel: uniformWeights(`${key}/channel`, channels * DESCRIPTOR_LEN, scale),
      spatial: uniformWeights(`${key}/spatial`, spatial * DESCRIPTOR_LEN, 1),
      bias: uniformWeights(`${key}/bias`, channels, 0.05),
    };
    weightCache.set(key, w);
  }
  return w;
}

function project(
  bytes: Buffer,
  label: string,
  shape: { channels: number; height: number; width: number },
): ActivationTensor {
  const { channels, height, width } = shape;
  const spatial = height * width;
  const desc = descriptor(bytes);
  const w = projectionWeights(label, channels, spatial);
  const data = new Float64Array(channels * spatial);
  // activation[c, s] = relu(sum_k channel[c,k] * spatial[s,k] * desc[k] + bias[c])
  const mixed = new Float64Array(DESCRIPTOR_LEN);
  for (let c = 0; c < channels; c++) {
    const cOff = c * DESCRIPTOR_LEN;
    for (let k = 0; k < DESCRIPTOR_LEN; k++) mixed[k] = w.channel[cOff + k] * desc[k];
    for (let s = 0; s < spatial; s++) {
      const sOff = s * DESCRIPTOR_LEN;
      let acc = w.bias[c];
      for (let k = 0; k < DESCRIPTOR_LEN; k++) acc += mixed[k] * w.spatial[sOff + k];
      data[c * spatial + s] = acc > 0 ? acc : 0;
    }
  }
  return { channels, height, width, data };
}

/** Content-feature tensor, shape (1024, 7, 7). */
export function denseActivations(bytes: Buffer): ActivationTensor {
  return project(bytes, 'dense', DENSE_SHAPE);
}

/** Mid-network style-feature tensor, shape (512, 7, 7). */
export function convActivations(bytes: Buffer): ActivationTensor {
  return project(bytes, 'conv', CONV_SHAPE);
}
