/** Translate a displayed side into the canonical candidate index. Under
 * "swap" the canonical first candidate is rendered on the right. */
export function sideToCanonical(side, perm) {
    const index = side === "left" ? 0 : 1;
    return perm === "identity" ? index : (1 - index);
}
/** Where a canonical candidate index is rendered under the permutation. */
export function canonicalToSide(choice, perm) {
    const presented = perm === "identity" ? choice : 1 - choice;
    return presented === 0 ? "left" : "right";
}
