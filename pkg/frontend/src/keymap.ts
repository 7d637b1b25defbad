import type { ClassLabel } from "./api.js";

// The one place the keyboard layout is defined: digit keys 1..6 map onto the
// six classes in the server's declaration order. GET /api/classes returns the
// same pairs; keymap.test.ts pins the two against each other.
export const CLASS_KEYS: ReadonlyArray<readonly [string, ClassLabel]> = [
  ["1", "LewyBody"],
  ["2", "Axon"],
  ["3", "Dendrite"],
  ["4", "UndifferentiatedNeurite"],
  ["5", "MultipleLewyBodies"],
  ["6", "StainingArtifact"],
];

const BY_KEY = new Map(CLASS_KEYS);
const BY_LABEL = new Map(CLASS_KEYS.map(([key, label]) => [label, key] as const));

/** Class for a digit key, or null if the key is not a labeling shortcut. */
export function classForKey(key: string): ClassLabel | null {
  return BY_KEY.get(key) ?? null;
}

/** Digit key for a class (total: every ClassLabel has one). */
export function keyForClass(label: ClassLabel): string {
  const key = BY_LABEL.get(label);
  if (key === undefined) {
    throw new Error(`no shortcut for label ${label}`);
  }
  return key;
}
