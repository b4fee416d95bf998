export type Permutation = "identity" | "swap";

export type Side = "left" | "right";

export interface Progress {
  done: number;
  total: number;
}

/** Triplet descriptor as served by GET /api/v1/next. Candidates arrive in
 * presented (already permuted) order; `perm` lets the client translate a
 * click back to the canonical manifest order. */
export interface TripletDescriptor {
  triplet_id: string;
  reference: string | null;
  candidates: [string | null, string | null];
  perm: Permutation;
  progress: Progress;
  aligned_reference?: string | null;
}

export interface NextResponse extends Partial<TripletDescriptor> {
  done?: boolean;
}

export interface VotePayload {
  triplet_id: string;
  rater_id: string;
  choice: 0 | 1;
  perm: Permutation;
}
