const defaultSleep = (ms) => new Promise((r) => setTimeout(r, ms));
/** Thin client for the study JSON API with retry on network failure.
 *
 * Votes are idempotent on the server (a rater's later vote for the same
 * triplet supersedes the earlier one), so replaying a dropped POST cannot
 * create duplicate effective votes. */
export class StudyClient {
    constructor(baseUrl = "", options = {}) {
        this.baseUrl = baseUrl;
        this.fetchImpl = options.fetchImpl ?? ((url, init) => fetch(url, init));
        this.maxAttempts = options.maxAttempts ?? 4;
        this.retryDelayMs = options.retryDelayMs ?? 500;
        this.sleep = options.sleep ?? defaultSleep;
    }
    async next(raterId) {
        const url = `${this.baseUrl}/api/v1/next?rater=${encodeURIComponent(raterId)}`;
        const resp = await this.withRetry(() => this.fetchImpl(url));
        if (!resp.ok) {
            throw new Error(`next failed: HTTP ${resp.status}`);
        }
        return (await resp.json());
    }
    async vote(payload) {
        const resp = await this.withRetry(() => this.fetchImpl(`${this.baseUrl}/api/v1/vote`, {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(payload),
        }));
        if (!resp.ok) {
            throw new Error(`vote rejected: HTTP ${resp.status}`);
        }
    }
    /** Retries network-level failures only; HTTP error statuses surface. */
    async withRetry(run) {
        let lastError;
        for (let attempt = 0; attempt < this.maxAttempts; attempt++) {
            if (attempt > 0) {
                await this.sleep(this.retryDelayMs * attempt);
            }
            try {
                return await run();
            }
            catch (err) {
                lastError = err;
            }
        }
        throw lastError instanceof Error ? lastError : new Error(String(lastError));
    }
}
