import { describe, expect, it } from 'vitest'

import { ServiceClient, ServiceRejection, TransportError } from '../src/api'
import type { RatingSubmission } from '../src/types'

const submission: RatingSubmission = {
  subject_id: 's01',
  session_id: 'r1-s01',
  image_id: 'img0',
  score: 42,
  training: false,
}

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { 'content-type': 'application/json' },
  })
}

function client(fetchImpl: (input: string, init?: RequestInit) => Promise<Response>) {
  const slept: number[] = []
  const c = new ServiceClient('http://svc', fetchImpl, [10, 20], async (ms) => {
    slept.push(ms)
  })
  return { c, slept }
}

describe('submitRating retry behavior', () => {
  it('retries network failures with backoff until success', async () => {
    let calls = 0
    const { c, slept } = client(async () => {
      calls += 1
      if (calls < 3) throw new TypeError('fetch failed')
      return jsonResponse({ status: 'stored' })
    })
    expect(await c.submitRating(submission)).toBe('stored')
    expect(calls).toBe(3)
    expect(slept).toEqual([10, 20])
  })

  it('treats a duplicate acknowledgment as success', async () => {
    const { c } = client(async () => jsonResponse({ status: 'duplicate' }))
    expect(await c.submitRating(submission)).toBe('duplicate')
  })

  it('retries 5xx but gives up after the delay schedule', async () => {
    let calls = 0
    const { c } = client(async () => {
      calls += 1
      return new Response('oops', { status: 503 })
    })
    await expect(c.submitRating(submission)).rejects.toBeInstanceOf(TransportError)
    expect(calls).toBe(3) // initial try + two retries
  })

  it('does not retry a 4xx rejection', async () => {
    let calls = 0
    const { c } = client(async () => {
      calls += 1
      return new Response('{"detail": "bad"}', { status: 422 })
    })
    await expect(c.submitRating(submission)).rejects.toBeInstanceOf(ServiceRejection)
    expect(calls).toBe(1)
  })
})

describe('session fetch', () => {
  it('propagates service errors with status and detail', async () => {
    const { c } = client(async () => new Response('no such round', { status: 404 }))
    await expect(c.fetchSession(9, 's01')).rejects.toBeInstanceOf(ServiceRejection)
  })

  it('returns the parsed session document', async () => {
    const doc = { subject_id: 's01', session_id: 'r1-s01', round: 1, training: [], main: [] }
    const { c } = client(async (url) => {
      expect(url).toBe('http://svc/api/rounds/1/session/s01')
      return jsonResponse(doc)
    })
    expect(await c.fetchSession(1, 's01')).toEqual(doc)
  })
})
