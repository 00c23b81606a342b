// HTTP client for the rating service with idempotent retrying submission.

import type { ImageDoc, ProgressDoc, RatingSubmission, SessionDoc, SubmitStatus } from './types'

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>
export type SleepFn = (ms: number) => Promise<void>

/** The service refused the payload; retrying the same request cannot help. */
export class ServiceRejection extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(`service rejected request (${status}): ${detail}`)
  }
}

/** Transport kept failing after every retry; the submission state is unknown. */
export class TransportError extends Error {}

const defaultSleep: SleepFn = (ms) => new Promise((resolve) => setTimeout(resolve, ms))

export class ServiceClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
    private readonly retryDelaysMs: number[] = [250, 1000, 4000],
    private readonly sleep: SleepFn = defaultSleep,
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`)
    if (!response.ok) {
      throw new ServiceRejection(response.status, await response.text())
    }
    return (await response.json()) as T
  }

  fetchSession(round: number, subjectId: string): Promise<SessionDoc> {
    return this.getJson(`/api/rounds/${round}/session/${encodeURIComponent(subjectId)}`)
  }

  fetchProgress(round: number, subjectId: string): Promise<ProgressDoc> {
    return this.getJson(`/api/rounds/${round}/progress/${encodeURIComponent(subjectId)}`)
  }

  fetchImage(imageId: string): Promise<ImageDoc> {
    return this.getJson(`/api/images/${encodeURIComponent(imageId)}`)
  }

  /**
   * Submit one rating. Network failures and 5xx responses are retried with
   * backoff; the service stores at most one record per (subject, session,
   * image), so a retry after a lost acknowledgment comes back 'duplicate'
   * and counts as success. 4xx responses are surfaced without retrying.
   */
  async submitRating(submission: RatingSubmission): Promise<SubmitStatus> {
    let lastError: unknown = null
    for (let attempt = 0; attempt <= this.retryDelaysMs.length; attempt++) {
      if (attempt > 0) {
        await this.sleep(this.retryDelaysMs[attempt - 1]!)
      }
      try {
        const response = await this.fetchImpl(`${this.baseUrl}/api/ratings`, {
          method: 'POST',
          headers: { 'content-type': 'application/json' },
          body: JSON.stringify(submission),
        })
        if (response.status >= 400 && response.status < 500) {
          throw new ServiceRejection(response.status, await response.text())
        }
        if (!response.ok) {
          lastError = new TransportError(`status ${response.status}`)
          continue
        }
        const body = (await response.json()) as { status: SubmitStatus }
        return body.status
      } catch (error) {
        if (error instanceof ServiceRejection) throw error
        lastError = error
      }
    }
    throw new TransportError(`submission failed after retries: ${String(lastError)}`)
  }
}
