/**
 * Text pathway: describe an image with a short caption or a set of style
 * concept annotations, then embed the resulting sentence as a fixed
 * 384-dimensional vector.
 *
 * The built-in describer is a deterministic stand-in: it scores taxonomy
 * concepts from a content digest of the image bytes instead of querying a
 * vision-language model. The embedding is real feature hashing over
 * tokens, so identical sentences always embed identically.
 */

import { createHash } from 'crypto';

import { VISUAL_ELEMENTS } from './taxonomy.js';

export const EMBED_DIM = 384;

function fnv1a32(text: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h >>> 0;
}

/**
 * Hashed bag-of-words sentence embedding: each token adds +-1 to one of
 * 384 buckets (bucket and sign both token-hash derived), then the vector
 * is L2-normalized. Empty text embeds as the zero vector.
 */
export function embedSentence(text: string): Float64Array {
  const out = new Float64Array(EMBED_DIM);
  const tokens = text.toLowerCase().split(/[^a-z0-9]+/).filter(t => t.length > 0);
  for (const token of tokens) {
    const h = fnv1a32(token);
    const bucket = h % EMBED_DIM;
    const sign = (h >>> 16) & 1 ? 1 : -1;
    out[bucket] += sign;
  }
  let norm = 0;
  for (let i = 0; i < EMBED_DIM; i++) norm += out[i] * out[i];
  norm = Math.sqrt(norm);
  if (norm > 0) {
    for (let i = 0; i < EMBED_DIM; i++) out[i] /= norm;
  }
  return out;
}

export interface TextDescriber {
  name: string;
  caption(imageBytes: Buffer): string;
  /** Answer the annotation instruction with concept picks per element. */
  annotate(imageBytes: Buffer, prompt: string): string;
}

/** Deterministic per-image, per-concept score in [0, 1). */
function conceptScore(digest: Buffer, element: string, concept: string): number {
  const h = createHash('sha256').update(digest).update(`${element}/${concept}`).digest();
  return h.readUInt32LE(0) / 4294967296;
}

function pickConcepts(imageBytes: Buffer): Map<string, string[]> {
  const digest = createHash('sha256').update(imageBytes).digest();
  const picks = new Map<string, string[]>();
  for (const { element, concepts } of VISUAL_ELEMENTS) {
    const scored = concepts
      .map(c => ({ concept: c, score: conceptScore(digest, element, c) }))
      .sort((a, b) => b.score - a.score);
    // concepts scoring above 0.7 are kept; every element names at least one
    const kept = scored.filter(s => s.score > 0.7).map(s => s.concept);
    picks.set(element, kept.length > 0 ? kept : [scored[0].concept]);
  }
  return picks;
}

const builtin: TextDescriber = {
  name: 'builtin',

  caption(imageBytes: Buffer): string {
    const picks = pickConcepts(imageBytes);
    const texture = picks.get('Texture')![0].toLowerCase();
    const color = picks.get('Color')![0].toLowerCase();
    const shape = picks.get('Shape')![0].toLowerCase();
    const light = picks.get('Light and Space')![0].toLowerCase();
    return `a ${light} composition with ${texture} texture, ${color} palette and ${shape} shapes`;
  },

  annotate(imageBytes: Buffer, prompt: string): string {
    if (prompt.length === 0) {
      throw new Error('annotation instruction must not be empty');
    }
    const picks = pickConcepts(imageBytes);
    const parts: string[] = [];
    for (const { element } of VISUAL_ELEMENTS) {
      parts.push(`${element}: ${picks.get(element)!.join(', ')}`);
    }
    return parts.join('. ');
  },
};

const DESCRIBERS: Record<string, TextDescriber> = { builtin };

export function getDescriber(name: string): TextDescriber {
  const describer = DESCRIBERS[name];
  if (!describer) {
    const available = Object.keys(DESCRIBERS).join(', ');
    throw new Error(
      `text model '${name}' is not available; available models: ${available}. ` +
      'Pass one of those names or register a describer before extracting.',
    );
  }
  return describer;
}
