import type {
  ApiErrorBody,
  EditRequestBody,
  EditResponse,
  SeriesSample,
  TemplatesResponse,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, public body: ApiErrorBody) {
    super(body.message);
  }
}

async function parseOrThrow<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let body: ApiErrorBody;
    try {
      body = (await resp.json()) as ApiErrorBody;
    } catch {
      body = { code: "unknown", message: `HTTP ${resp.status}` };
    }
    throw new ApiError(resp.status, body);
  }
  return (await resp.json()) as T;
}

export class ApiClient {
  constructor(
    private base: string = "",
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  templates(): Promise<TemplatesResponse> {
    return this.fetchFn(`${this.base}/api/templates`).then((r) =>
      parseOrThrow<TemplatesResponse>(r),
    );
  }

  sample(attributes?: Record<string, string>, seed?: number): Promise<SeriesSample> {
    const params = new URLSearchParams();
    if (attributes && Object.keys(attributes).length > 0) {
      params.set(
        "attributes",
        Object.entries(attributes)
          .map(([k, v]) => `${k}=${v}`)
          .join(","),
      );
    }
    if (seed !== undefined) params.set("seed", String(seed));
    const query = params.toString();
    return this.fetchFn(`${this.base}/api/datasets/sample${query ? "?" + query : ""}`).then(
      (r) => parseOrThrow<SeriesSample>(r),
    );
  }

  edit(body: EditRequestBody): Promise<EditResponse> {
    return this.fetchFn(`${this.base}/api/edit`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    }).then((r) => parseOrThrow<EditResponse>(r));
  }
}

/**
 * Serializes edit requests and discards stale responses: each request gets a
 * monotonically increasing sequence number, and a response is delivered only
 * if no newer request has been issued since.
 */
export class SequencedEditor {
  private seq = 0;

  constructor(private client: ApiClient) {}

  async edit(body: EditRequestBody): Promise<EditResponse | null> {
    const mine = ++this.seq;
    const response = await this.client.edit(body);
    return mine === this.seq ? response : null;
  }

  get currentSeq(): number {
    return this.seq;
  }
}
