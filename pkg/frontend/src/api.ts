import type { AnnotationTask, ConflictSummary, KappaReport, LabelSubmission } from "./types";

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string
  ) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function errorMessage(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { message?: string; error?: string };
    return body.message ?? body.error ?? `HTTP ${response.status}`;
  } catch {
    return `HTTP ${response.status}`;
  }
}

export class AnnotationApi {
  constructor(
    private baseUrl = "",
    private fetchFn: FetchLike = (input, init) => fetch(input, init)
  ) {}

  /** Fetch the next unlabeled pair; null when the queue is exhausted (204). */
  async nextPair(annotator: string): Promise<AnnotationTask | null> {
    const url = `${this.baseUrl}/api/pairs/next?annotator=${encodeURIComponent(annotator)}`;
    const response = await this.fetchFn(url);
    if (response.status === 204) return null;
    if (!response.ok) throw new ApiError(response.status, await errorMessage(response));
    return (await response.json()) as AnnotationTask;
  }

  /** Submit a label; resolves to the pair's new status. */
  async submitLabel(body: LabelSubmission): Promise<string> {
    const response = await this.fetchFn(`${this.baseUrl}/api/labels`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body)
    });
    if (!response.ok) throw new ApiError(response.status, await errorMessage(response));
    const payload = (await response.json()) as { status: string };
    return payload.status;
  }

  async kappa(): Promise<KappaReport> {
    const response = await this.fetchFn(`${this.baseUrl}/api/metrics/kappa`);
    if (!response.ok) throw new ApiError(response.status, await errorMessage(response));
    return (await response.json()) as KappaReport;
  }

  async conflicts(): Promise<ConflictSummary[]> {
    const response = await this.fetchFn(`${this.baseUrl}/api/pairs/conflicts`);
    if (!response.ok) throw new ApiError(response.status, await errorMessage(response));
    return (await response.json()) as ConflictSummary[];
  }
}
