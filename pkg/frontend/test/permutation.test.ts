import assert from "node:assert/strict";
import { test } from "node:test";

import { canonicalToSide, sideToCanonical } from "../src/permutation.js";
import type { Permutation, Side } from "../src/types.js";

test("identity permutation maps sides directly", () => {
  assert.equal(sideToCanonical("left", "identity"), 0);
  assert.equal(sideToCanonical("right", "identity"), 1);
});

test("swap permutation crosses sides", () => {
  assert.equal(sideToCanonical("left", "swap"), 1);
  assert.equal(sideToCanonical("right", "swap"), 0);
});

test("left and right map to opposite canonical choices under every permutation", () => {
  for (const perm of ["identity", "swap"] as Permutation[]) {
    const left = sideToCanonical("left", perm);
    const right = sideToCanonical("right", perm);
    assert.equal(left + right, 1);
  }
});

test("canonicalToSide inverts sideToCanonical", () => {
  for (const perm of ["identity", "swap"] as Permutation[]) {
    for (const side of ["left", "right"] as Side[]) {
      assert.equal(canonicalToSide(sideToCanonical(side, perm), perm), side);
    }
  }
});

test("canonical candidate 0 renders right under swap", () => {
  assert.equal(canonicalToSide(0, "swap"), "right");
  assert.equal(canonicalToSide(1, "swap"), "left");
});
