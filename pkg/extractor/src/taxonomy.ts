/**
 * Style-concept taxonomy: 59 concepts grouped under seven visual elements.
 * Used to build the annotation instruction and to name concept picks.
 */

export interface VisualElement {
  element: string;
  concepts: readonly string[];
}

export const VISUAL_ELEMENTS: readonly VisualElement[] = [
  { element: 'Subject', concepts: ['Representational', 'Non-representational'] },
  {
    element: 'Line',
    concepts: [
      'Blurred', 'Broken', 'Controlled', 'Curved', 'Diagonal', 'Horizontal',
      'Vertical', 'Meandering', 'Thick', 'Thin', 'Active', 'Energetic', 'Straight',
    ],
  },
  { element: 'Texture', concepts: ['Bumpy', 'Flat', 'Smooth', 'Gestural', 'Rough'] },
  {
    element: 'Color',
    concepts: ['Calm', 'Cool', 'Chromatic', 'Monochromatic', 'Muted', 'Warm', 'Transparent'],
  },
  {
    element: 'Shape',
    concepts: [
      'Ambiguous', 'Geometric', 'Amorphous', 'Biomorphic', 'Closed', 'Open',
      'Distorted', 'Heavy', 'Linear', 'Organic', 'Abstract', 'Decorative',
      'Kinetic', 'Light',
    ],
  },
  {
    element: 'Light and Space',
    concepts: ['Bright', 'Dark', 'Medium', 'Atmospheric', 'Planar', 'Perspective'],
  },
  {
    element: 'General Principles of Art',
    concepts: [
      'Overlapping', 'Balance', 'Contrast', 'Harmony', 'Pattern', 'Repetition',
      'Rhythm', 'Unity', 'Variety', 'Symmetry', 'Proportion', 'Parallel',
    ],
  },
];

/**
 * Instruction sent to the annotation model. Enumerates every visual
 * element with its full concept list so the model can only answer inside
 * the taxonomy.
 */
export function annotPrompt(): string {
  const lines = VISUAL_ELEMENTS.map(e => `${e.element}: ${e.concepts.join(', ')}`);
  return (
    'Describe the style of this artwork. For each visual element below, ' +
    'pick the matching concepts from its list and answer with only those ' +
    'concept names.\n' +
    lines.join('\n')
  );
}
