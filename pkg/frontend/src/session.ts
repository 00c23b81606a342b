// Session state: the pair queue exactly as served, slider gating, and
// submission that only advances on acknowledgment. The console holds no
// authoritative state — everything it records lives in the service log.

import type { RatingSubmission, SessionDoc, SessionEntry, SubmitStatus } from './types'

export interface RatingSink {
  submitRating(submission: RatingSubmission): Promise<SubmitStatus>
}

export interface SliderState {
  value: number
  moved: boolean
}

export type Side = 'left' | 'right'

export const DEFAULT_BREAK_AFTER_MS = 30 * 60 * 1000

export class SessionController {
  readonly queue: SessionEntry[]
  private index = 0
  private sliders: Record<Side, SliderState> = freshSliders()
  private inFlight = false
  private lastError: string | null = null
  private activityStart: number

  constructor(
    private readonly doc: SessionDoc,
    private readonly sink: RatingSink,
    private readonly clock: () => number = () => Date.now(),
    private readonly breakAfterMs: number = DEFAULT_BREAK_AFTER_MS,
  ) {
    // training block first, then every pair for the record; order is the
    // service's, never shuffled here
    this.queue = [...doc.training, ...doc.main]
    this.activityStart = clock()
  }

  get sessionId(): string {
    return this.doc.session_id
  }

  current(): SessionEntry | null {
    return this.index < this.queue.length ? this.queue[this.index]! : null
  }

  get completed(): number {
    return this.index
  }

  get done(): boolean {
    return this.index >= this.queue.length
  }

  get errorMessage(): string | null {
    return this.lastError
  }

  get submitting(): boolean {
    return this.inFlight
  }

  sliderState(side: Side): SliderState {
    return this.sliders[side]
  }

  moveSlider(side: Side, value: number): void {
    if (value < 0 || value > 100) return
    this.sliders[side] = { value, moved: true }
  }

  /** Submission unlocks only after both sliders have been touched. */
  canSubmit(): boolean {
    return (
      !this.done && !this.inFlight && this.sliders.left.moved && this.sliders.right.moved
    )
  }

  /**
   * Post both ratings of the current pair. The queue advances only when
   * both are acknowledged ('stored' or 'duplicate'); on failure the pair
   * stays current with the slider values intact so the subject can retry.
   * A second call while a submission is in flight is ignored.
   */
  async submitCurrent(): Promise<boolean> {
    const entry = this.current()
    if (entry === null || !this.canSubmit()) return false
    this.inFlight = true
    this.lastError = null
    try {
      for (const side of ['left', 'right'] as Side[]) {
        await this.sink.submitRating({
          subject_id: this.doc.subject_id,
          session_id: this.doc.session_id,
          image_id: entry[side],
          score: this.sliders[side].value,
          training: entry.training,
        })
      }
    } catch (error) {
      this.lastError = error instanceof Error ? error.message : String(error)
      return false
    } finally {
      this.inFlight = false
    }
    this.index += 1
    this.sliders = freshSliders()
    return true
  }

  /** Non-blocking reminder once the active stretch exceeds the limit. */
  breakDue(): boolean {
    return this.clock() - this.activityStart >= this.breakAfterMs
  }

  /** Dismissing the reminder starts a fresh activity window. */
  acknowledgeBreak(): void {
    this.activityStart = this.clock()
  }
}

function freshSliders(): Record<Side, SliderState> {
  return {
    left: { value: 50, moved: false },
    right: { value: 50, moved: false },
  }
}
