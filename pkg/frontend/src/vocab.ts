/** Shared vocabularies mirroring the service schema. */

export const PREDICATES = [
  "on",
  "left of",
  "right of",
  "behind",
  "in front of",
  "right touching",
  "left touching",
  "front touching",
  "behind touching",
  "inside",
  "surrounding",
] as const;

export type Predicate = (typeof PREDICATES)[number];

export const CLASSES = [
  "bed", "nightstand", "lamp", "desk", "dresser", "sofa", "cabinet",
  "wardrobe", "chair", "rug", "television", "shelf", "table", "window",
  "door",
] as const;

export type ClassName = (typeof CLASSES)[number];

/** Attribute chips offered by the node palette ("none" is the absence). */
export const ATTRIBUTES = ["tall", "short", "large", "small"] as const;

export type Attribute = (typeof ATTRIBUTES)[number];

export function isPredicate(value: string): value is Predicate {
  return (PREDICATES as readonly string[]).includes(value);
}

export function isClassName(value: string): value is ClassName {
  return (CLASSES as readonly string[]).includes(value);
}
