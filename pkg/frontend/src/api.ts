import type { NextResponse, VotePayload } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface ClientOptions {
  fetchImpl?: FetchLike;
  maxAttempts?: number;
  retryDelayMs?: number;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

/** Thin client for the study JSON API with retry on network failure.
 *
 * Votes are idempotent on the server (a rater's later vote for the same
 * triplet supersedes the earlier one), so replaying a dropped POST cannot
 * create duplicate effective votes. */
export class StudyClient {
  private fetchImpl: FetchLike;
  private maxAttempts: number;
  private retryDelayMs: number;
  private sleep: (ms: number) => Promise<void>;

  constructor(private baseUrl: string = "", options: ClientOptions = {}) {
    this.fetchImpl = options.fetchImpl ?? ((url, init) => fetch(url, init));
    this.maxAttempts = options.maxAttempts ?? 4;
    this.retryDelayMs = options.retryDelayMs ?? 500;
    this.sleep = options.sleep ?? defaultSleep;
  }

  async next(raterId: string): Promise<NextResponse> {
    const url = `${this.baseUrl}/api/v1/next?rater=${encodeURIComponent(raterId)}`;
    const resp = await this.withRetry(() => this.fetchImpl(url));
    if (!resp.ok) {
      throw new Error(`next failed: HTTP ${resp.status}`);
    }
    return (await resp.json()) as NextResponse;
  }

  async vote(payload: VotePayload): Promise<void> {
    const resp = await this.withRetry(() =>
      this.fetchImpl(`${this.baseUrl}/api/v1/vote`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(payload),
      })
    );
    if (!resp.ok) {
      throw new Error(`vote rejected: HTTP ${resp.status}`);
    }
  }

  /** Retries network-level failures only; HTTP error statuses surface. */
  private async withRetry(run: () => Promise<Response>): Promise<Response> {
    let lastError: unknown;
    for (let attempt = 0; attempt < this.maxAttempts; attempt++) {
      if (attempt > 0) {
        await this.sleep(this.retryDelayMs * attempt);
      }
      try {
        return await run();
      } catch (err) {
        lastError = err;
      }
    }
    throw lastError instanceof Error ? lastError : new Error(String(lastError));
  }
}
