import type {
  GenerateRequest,
  JobView,
  ManifestSplit,
  SampleListing,
  TreeDetail,
  TreeListing,
} from './types.js';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** Error raised for any non-2xx service response, carrying the HTTP status. */
export class ApiError extends Error {
  readonly status: number;

  constructor(status: number, detail: string) {
    super(detail);
    this.name = 'ApiError';
    this.status = status;
  }
}

async function errorDetail(response: Response): Promise<string> {
  try {
    const body = await response.json();
    if (body && typeof body.detail === 'string') return body.detail;
  } catch {
    // non-JSON error body; fall through to the status line
  }
  return `${response.status} ${response.statusText}`;
}

/**
 * Thin typed client for the exploration service. All methods throw ApiError
 * on non-2xx responses so callers can surface the service's own message.
 */
export class ServiceClient {
  readonly baseUrl: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl = '', fetchFn?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/$/, '');
    this.fetchFn = fetchFn ?? ((url, init) => fetch(url, init));
  }

  /** Absolute form of a service-relative URL such as an image path. */
  resolve(path: string): string {
    return path.startsWith('/') ? this.baseUrl + path : path;
  }

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, { method: 'GET' });
    if (!response.ok) throw new ApiError(response.status, await errorDetail(response));
    return (await response.json()) as T;
  }

  private async postJson<T>(path: string, body: unknown): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
    if (!response.ok) throw new ApiError(response.status, await errorDetail(response));
    return (await response.json()) as T;
  }

  async health(): Promise<{ status: string; backend: string | null; trees: number }> {
    return this.getJson('/health');
  }

  async listTrees(): Promise<TreeListing> {
    return this.getJson('/trees');
  }

  async getTree(treeId: string): Promise<TreeDetail> {
    return this.getJson(`/trees/${encodeURIComponent(treeId)}`);
  }

  async getSamples(treeId: string, nodeId: number): Promise<SampleListing> {
    return this.getJson(`/trees/${encodeURIComponent(treeId)}/nodes/${nodeId}/samples`);
  }

  /** Candidate seed scores per split, from the tree's archive manifest. */
  async getManifestSplits(treeId: string): Promise<ManifestSplit[]> {
    const manifest = await this.getJson<{ build_log?: ManifestSplit[] }>(
      `/trees/${encodeURIComponent(treeId)}/files/manifest.json`,
    );
    return manifest.build_log ?? [];
  }

  async startSplit(treeId: string, nodeId: number): Promise<JobView> {
    const body = await this.postJson<{ job: JobView }>(
      `/trees/${encodeURIComponent(treeId)}/nodes/${nodeId}/split`,
      {},
    );
    return body.job;
  }

  async generate(request: GenerateRequest): Promise<JobView> {
    const body = await this.postJson<{ job: JobView }>('/generate', request);
    return body.job;
  }

  async getJob(jobId: string): Promise<JobView> {
    return this.getJson(`/jobs/${encodeURIComponent(jobId)}`);
  }

  /** URL of the server-sent event stream for a job. */
  jobEventsUrl(jobId: string): string {
    return `${this.baseUrl}/jobs/${encodeURIComponent(jobId)}/events`;
  }
}
