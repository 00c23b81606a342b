// Wire types mirroring API.md. The console never sees which models mined a
// pair — entries carry only the pair id and the two stimulus ids.

export interface SessionEntry {
  pair_id: string
  left: string
  right: string
  training: boolean
}

export interface SessionDoc {
  subject_id: string
  session_id: string
  round: number
  training: SessionEntry[]
  main: SessionEntry[]
}

export interface RatingSubmission {
  subject_id: string
  session_id: string
  image_id: string
  score: number
  training: boolean
}

export type SubmitStatus = 'stored' | 'duplicate'

export interface ProgressDoc {
  subject_id: string
  session_id: string
  submitted: number
  training_submitted: number
  expected: number
}

export interface ImageDoc {
  image_id: string
  content_id: string
  distortion_type: string
  distortion_level: number
  features: number[]
}
