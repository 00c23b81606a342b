// DOM wiring: two stimuli, two sliders, gated submit, progress, error
// banner, training badge, break reminder.

import { ServiceClient } from './api'
import { drawProxy, proxySpec } from './proxy'
import { SessionController, type Side } from './session'
import type { SessionEntry } from './types'

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id)
  if (!node) throw new Error(`missing element #${id}`)
  return node as T
}

export class ConsoleUi {
  private skipLog: string[] = []

  constructor(
    private readonly controller: SessionController,
    private readonly client: ServiceClient,
  ) {}

  async start(): Promise<void> {
    this.bindSlider('left')
    this.bindSlider('right')
    el<HTMLButtonElement>('submit').addEventListener('click', () => void this.submit())
    el<HTMLButtonElement>('break-dismiss').addEventListener('click', () => {
      this.controller.acknowledgeBreak()
      el('break-banner').hidden = true
    })
    window.setInterval(() => {
      if (this.controller.breakDue()) el('break-banner').hidden = false
    }, 30_000)
    await this.showCurrent()
  }

  private bindSlider(side: Side): void {
    const input = el<HTMLInputElement>(`slider-${side}`)
    input.addEventListener('input', () => {
      this.controller.moveSlider(side, Number(input.value))
      el(`score-${side}`).textContent = input.value
      this.refreshGate()
    })
  }

  private refreshGate(): void {
    el<HTMLButtonElement>('submit').disabled = !this.controller.canSubmit()
  }

  private async showCurrent(): Promise<void> {
    const entry = this.controller.current()
    el('progress').textContent = `${this.controller.completed} / ${this.controller.queue.length}`
    if (entry === null) {
      el('rating-area').hidden = true
      el('done-banner').hidden = false
      return
    }
    el('training-badge').hidden = !entry.training
    for (const side of ['left', 'right'] as Side[]) {
      const input = el<HTMLInputElement>(`slider-${side}`)
      input.value = '50'
      el(`score-${side}`).textContent = '50'
      await this.renderStimulus(side, entry)
    }
    this.refreshGate()
  }

  private async renderStimulus(side: Side, entry: SessionEntry): Promise<void> {
    const canvas = el<HTMLCanvasElement>(`canvas-${side}`)
    try {
      const image = await this.client.fetchImage(entry[side])
      drawProxy(canvas, proxySpec(image))
    } catch (error) {
      // asset failure: log the pair and let the subject move on
      this.skipLog.push(`${entry.pair_id}:${entry[side]} (${String(error)})`)
      const ctx = canvas.getContext('2d')
      if (ctx) {
        ctx.clearRect(0, 0, canvas.width, canvas.height)
        ctx.fillStyle = '#666'
        ctx.fillText('stimulus unavailable — use skip', 10, 20)
      }
      el('skip-note').hidden = false
    }
  }

  private async submit(): Promise<void> {
    const ok = await this.controller.submitCurrent()
    const banner = el('error-banner')
    if (!ok) {
      banner.textContent = this.controller.errorMessage ?? 'submission failed; please retry'
      banner.hidden = false
      return
    }
    banner.hidden = true
    await this.showCurrent()
  }
}

export async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search)
  const subject = params.get('subject') ?? 'anonymous'
  const round = Number(params.get('round') ?? '1')
  const base = params.get('service') ?? ''
  const client = new ServiceClient(base)
  const doc = await client.fetchSession(round, subject)
  const controller = new SessionController(doc, client)
  await new ConsoleUi(controller, client).start()
}
