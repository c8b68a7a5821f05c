export {
  DENSE_SHAPE,
  CONV_SHAPE,
  DESCRIPTOR_LEN,
  descriptor,
  denseActivations,
  convActivations,
} from './backbone.js';
export type { ActivationTensor } from './backbone.js';
export { FmatError, encodeFmat, decodeFmat, readFmat, writeFmatAtomic } from './fmat.js';
export type { FeatureMatrix } from './fmat.js';
export { flattenActivations, gramMatrix, cosineFromGram, gramCosine } from './features.js';
export { VISUAL_ELEMENTS, annotPrompt } from './taxonomy.js';
export type { VisualElement } from './taxonomy.js';
export { EMBED_DIM, embedSentence, getDescriber } from './text.js';
export type { TextDescriber } from './text.js';
export { FEATURE_KINDS, ExtractError, runExtract } from './extract.js';
export type { FeatureKind, ExtractJob, ExtractResult } from './extract.js';
export { main } from './cli.js';
