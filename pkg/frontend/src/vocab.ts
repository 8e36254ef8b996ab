/**
 * The base vocabulary the word pickers offer. The server rejects
 * out-of-vocabulary words, and the manifest does not carry the word
 * list, so the client ships the same fixed set the models are trained
 * with: eight color names, four shape names, and "background".
 */

export const COLOR_WORDS = [
  'black', 'red', 'green', 'blue', 'yellow', 'magenta', 'cyan', 'white',
] as const;

export const SHAPE_WORDS = ['circle', 'square', 'triangle', 'star'] as const;

export const BASE_WORDS: readonly string[] = [
  ...COLOR_WORDS,
  ...SHAPE_WORDS,
  'background',
];

export function isKnownWord(word: string): boolean {
  return BASE_WORDS.includes(word);
}

/** Words a picker rejects, for an actionable error message. */
export function unknownWords(words: string[]): string[] {
  return words.filter((w) => !isKnownWord(w));
}
