import type { NextResponse, Permutation, TripletDescriptor } from "./types.js";

/** Everything the page needs to render one triplet. Built by picking known
 * fields only, so distortion metadata can never leak into the DOM even if a
 * server started sending extra keys. */
export interface ViewModel {
  tripletId: string;
  referenceUrl: string | null;
  alignedUrl: string | null;
  leftUrl: string | null;
  rightUrl: string | null;
  perm: Permutation;
  progressDone: number;
  progressTotal: number;
  progressFraction: number;
}

export function isDone(resp: NextResponse): boolean {
  return resp.done === true;
}

export function buildViewModel(desc: TripletDescriptor): ViewModel {
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
export function canVote(view: ViewModel, imagesFailed: boolean): boolean {
  return !imagesFailed && view.leftUrl !== null && view.rightUrl !== null;
}
