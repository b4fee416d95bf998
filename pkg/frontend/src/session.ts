import { StudyClient } from "./api.js";
import { sideToCanonical } from "./permutation.js";
import type { Progress, Side, TripletDescriptor } from "./types.js";
import { buildViewModel, isDone, ViewModel } from "./view.js";

export interface SessionEvents {
  onView(view: ViewModel): void;
  onDone(): void;
  onError(message: string): void;
}

/** One rater's pass through the study: fetch a triplet, capture the choice,
 * translate it to canonical order, submit, advance. A submit in flight
 * blocks further submits, so double clicks record exactly one vote. */
export class Session {
  private view: ViewModel | null = null;
  private submitting = false;

  constructor(
    private client: StudyClient,
    private raterId: string,
    private events: SessionEvents
  ) {}

  get currentView(): ViewModel | null {
    return this.view;
  }

  get isSubmitting(): boolean {
    return this.submitting;
  }

  async start(): Promise<void> {
    await this.advance();
  }

  private async advance(): Promise<void> {
    let resp;
    try {
      resp = await this.client.next(this.raterId);
    } catch (err) {
      this.events.onError(err instanceof Error ? err.message : String(err));
      return;
    }
    if (isDone(resp)) {
      this.view = null;
      this.events.onDone();
      return;
    }
    this.view = buildViewModel(resp as TripletDescriptor);
    this.events.onView(this.view);
  }

  /** Returns true when a vote was submitted, false when ignored. */
  async choose(side: Side): Promise<boolean> {
    if (this.view === null || this.submitting) {
      return false;
    }
    const view = this.view;
    const choice = sideToCanonical(side, view.perm);
    this.submitting = true;
    try {
      await this.client.vote({
        triplet_id: view.tripletId,
        rater_id: this.raterId,
        choice,
        perm: view.perm,
      });
    } catch (err) {
      this.events.onError(err instanceof Error ? err.message : String(err));
      return false;
    } finally {
      this.submitting = false;
    }
    await this.advance();
    return true;
  }
}
