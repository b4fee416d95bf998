import assert from "node:assert/strict";
import { test } from "node:test";
import { buildViewModel, canVote, isDone } from "../src/view.js";
const descriptor = {
    triplet_id: "sc:5:0",
    reference: "/img/aaaa.png",
    candidates: ["/img/bbbb.png", "/img/cccc.png"],
    perm: "swap",
    progress: { done: 5, total: 20 },
};
test("view model carries urls and permutation", () => {
    const view = buildViewModel(descriptor);
    assert.equal(view.tripletId, "sc:5:0");
    assert.equal(view.referenceUrl, "/img/aaaa.png");
    assert.equal(view.leftUrl, "/img/bbbb.png");
    assert.equal(view.rightUrl, "/img/cccc.png");
    assert.equal(view.perm, "swap");
    assert.equal(view.alignedUrl, null);
});
test("progress bar fraction", () => {
    const view = buildViewModel(descriptor);
    assert.equal(view.progressDone, 5);
    assert.equal(view.progressTotal, 20);
    assert.equal(view.progressFraction, 0.25);
});
test("no metadata leaks into the view model", () => {
    const leaky = {
        ...descriptor,
        distortion_type: "gaussian-blur",
        distortion_level: 5,
        model: "secret",
    };
    const view = buildViewModel(leaky);
    const serialized = JSON.stringify(view);
    assert.ok(!serialized.includes("gaussian-blur"));
    assert.ok(!serialized.includes("distortion"));
    assert.ok(!serialized.includes("secret"));
    assert.deepEqual(Object.keys(view).sort(), [
        "alignedUrl",
        "leftUrl",
        "perm",
        "progressDone",
        "progressFraction",
        "progressTotal",
        "referenceUrl",
        "rightUrl",
        "tripletId",
    ]);
});
test("aligned pane url is surfaced only when the server sends it", () => {
    const withAligned = buildViewModel({ ...descriptor, aligned_reference: "/img/dddd.png" });
    assert.equal(withAligned.alignedUrl, "/img/dddd.png");
});
test("voting disabled on missing images or load failure", () => {
    const view = buildViewModel(descriptor);
    assert.equal(canVote(view, false), true);
    assert.equal(canVote(view, true), false);
    const broken = buildViewModel({ ...descriptor, candidates: [null, "/img/c.png"] });
    assert.equal(canVote(broken, false), false);
});
test("done marker", () => {
    assert.equal(isDone({ done: true }), true);
    assert.equal(isDone(descriptor), false);
});
