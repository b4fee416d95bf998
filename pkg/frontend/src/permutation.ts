import type { Permutation, Side } from "./types.js";

/** Translate a displayed side into the canonical candidate index. Under
 * "swap" the canonical first candidate is rendered on the right. */
export function sideToCanonical(side: Side, perm: Permutation): 0 | 1 {
  const index = side === "left" ? 0 : 1;
  return perm === "identity" ? index : ((1 - index) as 0 | 1);
}

/** Where a canonical candidate index is rendered under the permutation. */
export function canonicalToSide(choice: 0 | 1, perm: Permutation): Side {
  const presented = perm === "identity" ? choice : 1 - choice;
  return presented === 0 ? "left" : "right";
}
