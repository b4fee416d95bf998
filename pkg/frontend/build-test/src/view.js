export function isDone(resp) {
    return resp.done === true;
}
export function buildViewModel(desc) {
    const total = desc.progress?.total ?? 0;
    const done = desc.progress?.done ?? 0;
    return {
        tripletId: desc.triplet_id,
        referenceUrl: desc.reference ?? null,
        alignedUrl: desc.aligned_reference ?? null,
        leftUrl: desc.candidates?.[0] ?? null,
        rightUrl: desc.candidates?.[1] ?? null,
        perm: desc.perm,
        progressDone: done,
        progressTotal: total,
        progressFraction: total > 0 ? done / total : 0,
    };
}
/** A triplet can be voted on only when both candidates loaded. */
export function canVote(view, imagesFailed) {
    return !imagesFailed && view.leftUrl !== null && view.rightUrl !== null;
}
