// Deterministic visual proxy for a stimulus. Real deployments show the
// actual image; in simulation mode each feature vector is rendered as a
// stable abstract pattern so the full loop can be demonstrated end to end.

import type { ImageDoc } from './types'

export interface ProxyCell {
  row: number
  col: number
  fill: string
}

export interface ProxySpec {
  grid: number
  cells: ProxyCell[]
  overlayAlpha: number // distortion veil strength, scales with level
  overlayHue: number // stable per distortion type
}

function hashString(text: string): number {
  let h = 2166136261
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i)
    h = Math.imul(h, 16777619)
  }
  return h >>> 0
}

function channel(value: number): number {
  const squashed = 0.5 + 0.5 * Math.tanh(value / 3)
  return Math.round(40 + 175 * squashed)
}

/** Pure: identical ImageDoc -> identical spec. */
export function proxySpec(image: ImageDoc, grid = 8): ProxySpec {
  const f = image.features
  const base = hashString(image.content_id)
  const cells: ProxyCell[] = []
  for (let row = 0; row < grid; row++) {
    for (let col = 0; col < grid; col++) {
      const k = row * grid + col
      const a = f[k % f.length] ?? 0
      const b = f[(k * 7 + 3) % f.length] ?? 0
      const c = f[(k * 13 + 5) % f.length] ?? 0
      const jitter = (base >> (k % 24)) & 7
      cells.push({
        row,
        col,
        fill: `rgb(${channel(a) + jitter}, ${channel(b)}, ${channel(c)})`,
      })
    }
  }
  return {
    grid,
    cells,
    overlayAlpha: Math.min(0.72, 0.12 * image.distortion_level),
    overlayHue: hashString(image.distortion_type) % 360,
  }
}

export function drawProxy(canvas: HTMLCanvasElement, spec: ProxySpec): void {
  const ctx = canvas.getContext('2d')
  if (!ctx) return
  const cell = Math.floor(Math.min(canvas.width, canvas.height) / spec.grid)
  ctx.clearRect(0, 0, canvas.width, canvas.height)
  for (const { row, col, fill } of spec.cells) {
    ctx.fillStyle = fill
    ctx.fillRect(col * cell, row * cell, cell, cell)
  }
  ctx.fillStyle = `hsla(${spec.overlayHue}, 65%, 45%, ${spec.overlayAlpha})`
  ctx.fillRect(0, 0, spec.grid * cell, spec.grid * cell)
}
