/** Wire types for the layout service API. */

/** [min_x, min_y, min_z, max_x, max_y, max_z, rotation_bin] */
export type LayoutBox = [number, number, number, number, number, number, number];

export type TripletDoc = [number, string, number];

export interface NodeDoc {
  id: number;
  class: string;
  attributes: string[];
}

export interface SceneDoc {
  room: { width: number; depth: number; height: number };
  nodes: NodeDoc[];
  triplets: TripletDoc[];
  layout?: LayoutBox[];
}

export interface SampleResponse {
  layouts: LayoutBox[][];
  accuracy: number[];
  seed: number;
}

export interface InterpolateResponse {
  t: number[];
  layouts: LayoutBox[][];
}

export interface RenderResponse {
  depth: string;
  semantic: string;
  svg: string;
  camera: { width: number; height: number };
}

export interface HeatmapResponse {
  bins: number;
  samples: number;
  classes: Record<string, number[][]>;
}

export interface CheckpointsResponse {
  loaded: string | null;
  checkpoints: { id: string }[];
}

export interface JobRecord {
  attempt: number;
  step: number;
  total: number;
  depth: number;
  semantic: number;
  size: number;
}

export interface JobResult {
  layout: LayoutBox[];
  initial_loss: number;
  final_loss: number;
  selected_attempt: number;
}

/** One NDJSON line from /api/jobs/{id}: a step record or the final snapshot. */
export interface JobLine {
  record?: JobRecord;
  state?: "queued" | "running" | "done" | "failed";
  progress?: number;
  result?: JobResult;
  error?: string | null;
}

export interface ApiError {
  code: string;
  message: string;
  field?: string;
}
