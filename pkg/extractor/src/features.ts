/**
 * Feature math applied on top of activation tensors: flattening, Gram
 * matrices, and cosine-weighted Gram matrices.
 */

import type { ActivationTensor } from './backbone.js';

/** Row-major flatten of the (channels, height, width) tensor. */
export function flattenActivations(t: ActivationTensor): Float64Array {
  return Float64Array.from(t.data);
}

/**
 * Channel Gram matrix: entry (i, j) is the inner product of channel i and
 * channel j over all spatial positions. Returned row-major, c x c.
 */
export function gramMatrix(t: ActivationTensor): Float64Array {
  const c = t.channels;
  const hw = t.height * t.width;
  const g = new Float64Array(c * c);
  for (let i = 0; i < c; i++) {
    const fi = i * hw;
    for (let j = i; j < c; j++) {
      const fj = j * hw;
      let acc = 0;
      for (let s = 0; s < hw; s++) acc += t.data[fi + s] * t.data[fj + s];
      g[i * c + j] = acc;
      g[j * c + i] = acc;
    }
  }
  return g;
}

/**
 * Channel cosine-similarity matrix computed from a Gram matrix:
 * cos(i, j) = g(i, j) / (||f_i|| * ||f_j||). A channel with zero norm has
 * no direction, so its row and column (diagonal included) are set to 0.
 */
export function cosineFromGram(gram: Float64Array, channels: number): Float64Array {
  const norms = new Float64Array(channels);
  for (let i = 0; i < channels; i++) norms[i] = Math.sqrt(gram[i * channels + i]);
  const out = new Float64Array(channels * channels);
  for (let i = 0; i < channels; i++) {
    if (norms[i] === 0) continue;
    for (let j = 0; j < channels; j++) {
      if (norms[j] === 0) continue;
      out[i * channels + j] = gram[i * channels + j] / (norms[i] * norms[j]);
    }
  }
  return out;
}

/** Elementwise product of the Gram matrix and the cosine-similarity matrix. */
export function gramCosine(t: ActivationTensor): Float64Array {
  const c = t.channels;
  const g = gramMatrix(t);
  const cos = cosineFromGram(g, c);
  const out = new Float64Array(c * c);
  for (let i = 0; i < out.length; i++) out[i] = g[i] * cos[i];
  return out;
}
