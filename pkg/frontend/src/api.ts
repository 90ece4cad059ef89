/**
 * Typed client for the freeinsert service API. All pixel/diffusion math
 * happens server-side; this module only moves JSON.
 *
 * `fetchFn` is injectable so tests can run against a scripted server.
 */

export interface PlacementJson {
  x: number;
  y: number;
  scale: number;
  rotation_deg: number;
}

export interface KnobRanges {
  [knob: string]: [number, number];
}

export interface AssetsResponse {
  objects: { id: string; views: string[] }[];
  backgrounds: string[];
  knobs: KnobRanges;
}

export interface JobRequestJson {
  object: string;
  view_tag: string;
  background: string;
  placement: PlacementJson;
  prompt: string | null;
  tau_f: number;
  tau_q: number;
  tau_k: number;
  seed: number;
  guidance: number;
  style_weight: number;
  content_weight: number;
  num_steps: number;
}

export interface JobDetail {
  job_id: string;
  status: 'submitted' | 'running' | 'done' | 'failed';
  request: JobRequestJson;
  result: {
    image: string;
    metadata: string;
    injection_log: string;
    image_sha256: string;
  } | null;
  error: string | null;
}

export interface PreviewResponse {
  image_b64: string;
  mask_b64: string;
  width: number;
  height: number;
}

export interface ApiError {
  status: number;
  detail: string;
  field?: string;
  fields?: string[];
  suggestion?: { x: number; y: number };
}

export type FetchFn = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl: string = '',
    private fetchFn: FetchFn = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path, init);
    const body = await resp.json();
    if (!resp.ok) {
      const err: ApiError = { status: resp.status, ...body };
      throw err;
    }
    return body as T;
  }

  getAssets(): Promise<AssetsResponse> {
    return this.request<AssetsResponse>('/assets');
  }

  getRenders(objectId: string): Promise<{ object: string; views: string[] }> {
    return this.request(`/renders/${encodeURIComponent(objectId)}`);
  }

  getBackground(backgroundId: string): Promise<{ image_b64: string; width: number; height: number }> {
    return this.request(`/backgrounds/${encodeURIComponent(backgroundId)}`);
  }

  preview(body: {
    object: string;
    view_tag: string;
    background: string;
    placement: PlacementJson;
  }): Promise<PreviewResponse> {
    return this.request('/preview', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
  }

  submitJob(body: JobRequestJson): Promise<{ job_id: string; status: string }> {
    return this.request('/jobs', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
  }

  getJob(jobId: string): Promise<JobDetail> {
    return this.request(`/jobs/${encodeURIComponent(jobId)}`);
  }

  health(): Promise<{ status: string; backend_ready: boolean }> {
    return this.request('/healthz');
  }
}
