import { describe, expect, it } from 'vitest'

import { SessionController } from '../src/session'
import type { SessionDoc, SessionEntry } from '../src/types'
import { MockService } from './mock-service'

function makeDoc(nPairs: number, nTraining = 5): SessionDoc {
  const entry = (k: number, training: boolean): SessionEntry => ({
    pair_id: `r1-p${String(k).padStart(4, '0')}`,
    left: `img${2 * k}`,
    right: `img${2 * k + 1}`,
    training,
  })
  const main = Array.from({ length: nPairs }, (_, k) => entry(k, false))
  const training = Array.from({ length: Math.min(nTraining, nPairs) }, (_, k) => entry(k, true))
  return { subject_id: 's01', session_id: 'r1-s01', round: 1, training, main }
}

async function ratePair(controller: SessionController, left = 60, right = 40) {
  controller.moveSlider('left', left)
  controller.moveSlider('right', right)
  return controller.submitCurrent()
}

describe('submit gating', () => {
  it('starts disabled and unlocks after both sliders moved', () => {
    const controller = new SessionController(makeDoc(2, 0), new MockService())
    expect(controller.canSubmit()).toBe(false)
    controller.moveSlider('left', 70)
    expect(controller.canSubmit()).toBe(false)
    controller.moveSlider('right', 30)
    expect(controller.canSubmit()).toBe(true)
  })

  it('out-of-range slider values are ignored', () => {
    const controller = new SessionController(makeDoc(1, 0), new MockService())
    controller.moveSlider('left', 150)
    controller.moveSlider('right', -3)
    expect(controller.canSubmit()).toBe(false)
  })
})

describe('queue discipline', () => {
  it('preserves the served order with the training block first', () => {
    const doc = makeDoc(6)
    const controller = new SessionController(doc, new MockService())
    expect(controller.queue.map((e) => [e.pair_id, e.training])).toEqual(
      [...doc.training, ...doc.main].map((e) => [e.pair_id, e.training]),
    )
  })

  it('advances one pair per acknowledged submission', async () => {
    const service = new MockService()
    const controller = new SessionController(makeDoc(3, 0), service)
    expect(controller.completed).toBe(0)
    await ratePair(controller)
    expect(controller.completed).toBe(1)
    expect(controller.canSubmit()).toBe(false) // sliders reset for the next pair
  })
})

describe('session completion', () => {
  it('an N-pair session leaves exactly 2N non-training records', async () => {
    const nPairs = 8
    const service = new MockService()
    const controller = new SessionController(makeDoc(nPairs), service)
    while (!controller.done) {
      expect(await ratePair(controller, 55, 45)).toBe(true)
    }
    expect(service.nonTraining()).toHaveLength(2 * nPairs)
    expect(service.training()).toHaveLength(2 * 5)
  })
})

describe('failure handling', () => {
  it('does not advance when the transport keeps failing', async () => {
    const service = new MockService()
    service.failNext = 99
    const controller = new SessionController(makeDoc(2, 0), service)
    expect(await ratePair(controller)).toBe(false)
    expect(controller.completed).toBe(0)
    expect(controller.errorMessage).toMatch(/network/)
    expect(service.log).toHaveLength(0)
  })

  it('a lost acknowledgment retried by the subject never duplicates records', async () => {
    const service = new MockService()
    service.dropAckNext = 1 // first record stored, ack lost
    const controller = new SessionController(makeDoc(1, 0), service)
    expect(await ratePair(controller)).toBe(false)
    expect(service.log).toHaveLength(1)
    // subject clicks submit again; the stored half answers 'duplicate'
    expect(await controller.submitCurrent()).toBe(true)
    expect(service.log).toHaveLength(2)
    expect(controller.done).toBe(true)
  })

  it('ignores a second click while a submission is in flight', async () => {
    const service = new MockService()
    const controller = new SessionController(makeDoc(1, 0), service)
    controller.moveSlider('left', 80)
    controller.moveSlider('right', 20)
    const first = controller.submitCurrent()
    const second = controller.submitCurrent()
    expect(await second).toBe(false)
    expect(await first).toBe(true)
    expect(service.log).toHaveLength(2)
  })
})

describe('training flag', () => {
  it('training pairs submit under the training session', async () => {
    const service = new MockService()
    const controller = new SessionController(makeDoc(6), service)
    await ratePair(controller) // first queue entry is a training pair
    expect(service.training()).toHaveLength(2)
    expect(service.nonTraining()).toHaveLength(0)
    expect(service.log[0]!.session).toBe('r1-s01.train')
  })
})

describe('break reminder', () => {
  it('fires after 30 minutes of activity and resets on acknowledgment', () => {
    let now = 1_000_000
    const controller = new SessionController(
      makeDoc(2, 0),
      new MockService(),
      () => now,
    )
    expect(controller.breakDue()).toBe(false)
    now += 30 * 60 * 1000
    expect(controller.breakDue()).toBe(true)
    controller.acknowledgeBreak()
    expect(controller.breakDue()).toBe(false)
    now += 30 * 60 * 1000
    expect(controller.breakDue()).toBe(true)
  })
})
