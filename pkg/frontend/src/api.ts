/**
 * Typed client for the project service. Every server mutation the app
 * performs goes through exactly one method here, and every method maps
 * to exactly one documented endpoint, so auditing the transport log is
 * enough to audit the app's writes.
 *
 * The transport is injectable: the app passes window.fetch, tests pass
 * a recorder or a stub.
 */

import type {
  EditRequestDto,
  FinetuneConfigDto,
  JobView,
  MaskEditDto,
  ProjectManifest,
  RegionMetrics,
} from './types.js';

export type Transport = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  status: number;
  /** server detail payload, rendered verbatim in error panels */
  detail: string;

  constructor(status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
    this.status = status;
    this.detail = detail;
  }
}

async function fail(res: Response): Promise<never> {
  let detail = res.statusText;
  try {
    const body = await res.json();
    if (typeof body?.detail === 'string') detail = body.detail;
    else detail = JSON.stringify(body);
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(res.status, detail);
}

export interface CreateProjectResponse {
  project_id: string;
  items: Array<{ id: number; pixel_count: number; token_ids: number[] }>;
}

export interface ProjectOptions {
  tokens_per_item?: number;
}

export class ApiClient {
  private base: string;
  private transport: Transport;

  constructor(baseUrl: string, transport?: Transport) {
    this.base = baseUrl.replace(/\/$/, '');
    this.transport = transport ?? ((url, init) => fetch(url, init));
  }

  private async json<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { 'content-type': 'application/json' };
      init.body = JSON.stringify(body);
    }
    const res = await this.transport(this.base + path, init);
    if (!res.ok) await fail(res);
    return (await res.json()) as T;
  }

  private async bytes(path: string): Promise<Uint8Array> {
    const res = await this.transport(this.base + path, { method: 'GET' });
    if (!res.ok) await fail(res);
    return new Uint8Array(await res.arrayBuffer());
  }

  // -------------------------------------------------------- mutations

  /** POST /api/projects */
  async createProject(imagePpm: Uint8Array, maskPgm: Uint8Array,
                      options?: ProjectOptions): Promise<CreateProjectResponse> {
    const form = new FormData();
    form.append('image.ppm', new Blob([imagePpm.slice().buffer]), 'image.ppm');
    form.append('mask.pgm', new Blob([maskPgm.slice().buffer]), 'mask.pgm');
    if (options) form.append('options', JSON.stringify(options));
    const res = await this.transport(`${this.base}/api/projects`,
                                     { method: 'POST', body: form });
    if (!res.ok) await fail(res);
    return (await res.json()) as CreateProjectResponse;
  }

  /** PUT /api/projects/{id}/mask */
  putMask(projectId: string, edits: MaskEditDto[]): Promise<ProjectManifest> {
    return this.json('PUT', `/api/projects/${projectId}/mask`, edits);
  }

  /** POST /api/projects/{id}/finetune */
  startFinetune(projectId: string, config: FinetuneConfigDto = {}): Promise<{ job_id: string }> {
    return this.json('POST', `/api/projects/${projectId}/finetune`, config);
  }

  /** POST /api/pairs */
  createPair(targetId: string, referenceId: string,
             config?: FinetuneConfigDto): Promise<{ job_id: string }> {
    const body: Record<string, unknown> = { target_id: targetId, reference_id: referenceId };
    if (config) body.config = config;
    return this.json('POST', '/api/pairs', body);
  }

  /** POST /api/projects/{id}/edits */
  submitEdit(projectId: string, request: EditRequestDto): Promise<{ job_id: string }> {
    return this.json('POST', `/api/projects/${projectId}/edits`, request);
  }

  // ---------------------------------------------------------- reads

  /** GET /api/projects/{id} */
  getProject(projectId: string): Promise<ProjectManifest> {
    return this.json('GET', `/api/projects/${projectId}`);
  }

  /** GET /api/jobs/{id} */
  getJob(jobId: string): Promise<JobView> {
    return this.json('GET', `/api/jobs/${jobId}`);
  }

  /** GET /api/results/{id}/image */
  resultImage(resultId: string): Promise<Uint8Array> {
    return this.bytes(`/api/results/${resultId}/image`);
  }

  /** GET /api/results/{id}/mask */
  resultMask(resultId: string): Promise<Uint8Array> {
    return this.bytes(`/api/results/${resultId}/mask`);
  }

  /** GET /api/results/{id}/metrics; null when the edit kept no region metrics */
  async resultMetrics(resultId: string): Promise<RegionMetrics | null> {
    const doc = await this.json<{ result_id: string; metrics: RegionMetrics | null }>(
      'GET', `/api/results/${resultId}/metrics`);
    return doc.metrics;
  }

  /** Result id of a project's upload mirror (its editable original). */
  static originalResultId(manifest: ProjectManifest): string {
    const rid = manifest.results.find((r) => r.endsWith('-orig'));
    if (!rid) throw new ApiError(500, `project ${manifest.id} has no original result`);
    return rid;
  }
}
