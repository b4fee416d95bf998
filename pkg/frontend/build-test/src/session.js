import { sideToCanonical } from "./permutation.js";
import { buildViewModel, isDone } from "./view.js";
/** One rater's pass through the study: fetch a triplet, capture the choice,
 * translate it to canonical order, submit, advance. A submit in flight
 * blocks further submits, so double clicks record exactly one vote. */
export class Session {
    constructor(client, raterId, events) {
        this.client = client;
        this.raterId = raterId;
        this.events = events;
        this.view = null;
        this.submitting = false;
    }
    get currentView() {
        return this.view;
    }
    get isSubmitting() {
        return this.submitting;
    }
    async start() {
        await this.advance();
    }
    async advance() {
        let resp;
        try {
            resp = await this.client.next(this.raterId);
        }
        catch (err) {
            this.events.onError(err instanceof Error ? err.message : String(err));
            return;
        }
        if (isDone(resp)) {
            this.view = null;
            this.events.onDone();
            return;
        }
        this.view = buildViewModel(resp);
        this.events.onView(this.view);
    }
    /** Returns true when a vote was submitted, false when ignored. */
    async choose(side) {
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
        }
        catch (err) {
            this.events.onError(err instanceof Error ? err.message : String(err));
            return false;
        }
        finally {
            this.submitting = false;
        }
        await this.advance();
        return true;
    }
}
