/** Thin typed client for the layout service; every value shown in the UI
 * comes straight out of these responses. */

import type {
  ApiError,
  CheckpointsResponse,
  HeatmapResponse,
  InterpolateResponse,
  JobLine,
  RenderResponse,
  SampleResponse,
  SceneDoc,
} from "./types.js";

export class ApiRequestError extends Error {
  constructor(readonly status: number, readonly detail: ApiError) {
    super(detail.message);
    this.name = "ApiRequestError";
  }
}

async function expectJson<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail: ApiError;
    try {
      detail = (await resp.json()) as ApiError;
    } catch {
      detail = { code: "http_error", message: resp.statusText };
    }
    throw new ApiRequestError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

export class ApiClient {
  constructor(
    private readonly base = "",
    private readonly fetchFn: typeof fetch = (...args) => fetch(...args),
  ) {}

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.fetchFn(this.base + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    }).then((r) => expectJson<T>(r));
  }

  private get<T>(path: string): Promise<T> {
    return this.fetchFn(this.base + path).then((r) => expectJson<T>(r));
  }

  submitScene(scene: SceneDoc): Promise<{ id: string }> {
    return this.post("/api/scenes", scene);
  }

  getScene(id: string): Promise<SceneDoc> {
    return this.get(`/api/scenes/${id}`);
  }

  sample(sceneId: string, n: number, seed: number): Promise<SampleResponse> {
    return this.post("/api/sample", { scene_id: sceneId, n, seed });
  }

  interpolate(
    sceneId: string, seedA: number, seedB: number, steps: number,
  ): Promise<InterpolateResponse> {
    return this.post("/api/interpolate", {
      scene_id: sceneId, seed_a: seedA, seed_b: seedB, steps,
    });
  }

  render(sceneId: string, layoutIndex?: number): Promise<RenderResponse> {
    const body: Record<string, unknown> = { scene_id: sceneId };
    if (layoutIndex !== undefined) body.layout_index = layoutIndex;
    return this.post("/api/render", body);
  }

  heatmap(sceneId: string, samples: number, bins: number):
      Promise<HeatmapResponse> {
    const q = new URLSearchParams({
      scene_id: sceneId, samples: String(samples), bins: String(bins),
    });
    return this.get(`/api/heatmap?${q}`);
  }

  startRefine(
    sceneId: string, targetDepth: string, targetSem: string,
    config: Record<string, unknown>, seed: number,
  ): Promise<{ job_id: string }> {
    return this.post("/api/refine", {
      scene_id: sceneId,
      target_depth: targetDepth,
      target_sem: targetSem,
      config,
      seed,
    });
  }

  checkpoints(): Promise<CheckpointsResponse> {
    return this.get("/api/checkpoints");
  }

  loadCheckpoint(id: string): Promise<{ loaded: string }> {
    return this.post(`/api/checkpoints/${id}/load`, {});
  }

  /** Stream a job's NDJSON lines, invoking onLine for each parsed one. */
  async streamJob(
    jobId: string,
    onLine: (line: JobLine) => void,
    signal?: AbortSignal,
  ): Promise<void> {
    const resp = await this.fetchFn(`${this.base}/api/jobs/${jobId}`,
                                    { signal });
    if (!resp.ok) {
      throw new ApiRequestError(resp.status, {
        code: "job_error", message: resp.statusText,
      });
    }
    for (const line of parseNdjson(await resp.text())) {
      onLine(line);
    }
  }
}

/** Parse a complete NDJSON body, skipping blank lines. */
export function parseNdjson(body: string): JobLine[] {
  return body
    .split("\n")
    .filter((line) => line.trim().length > 0)
    .map((line) => JSON.parse(line) as JobLine);
}
