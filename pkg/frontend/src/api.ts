// Thin typed client over the judging service's HTTP API. Server rejections
// surface verbatim as ApiError so pages can display them unchanged.

import type {
  Assignment,
  ComparisonTask,
  FormPayload,
  UtteranceView,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private base: string = "",
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(this.base + path, init);
    const body = await response.json().catch(() => ({}));
    if (!response.ok) {
      throw new ApiError(response.status, body.error ?? response.statusText);
    }
    return body as T;
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  async nextAssignment(judgeId: string): Promise<Assignment | null> {
    const body = await this.request<{ assignment: Assignment | null }>(
      `/api/assignment?judge=${encodeURIComponent(judgeId)}`,
    );
    return body.assignment;
  }

  utterance(utteranceId: string, version: string): Promise<UtteranceView> {
    return this.request(`/api/utterance/${utteranceId}/${version}`);
  }

  submitForm(assignmentId: string, judgeId: string, form: FormPayload): Promise<void> {
    return this.post("/api/form", { assignmentId, judgeId, form });
  }

  fetchForm(utteranceId: string, version: string): Promise<FormPayload> {
    return this.request<{ form: FormPayload }>(
      `/api/form/${utteranceId}/${version}`,
    ).then((body) => body.form);
  }

  submitRecognition(
    assignmentId: string,
    judgeId: string,
    recognition: "acceptable" | "abort",
  ): Promise<{ autoCategory?: string }> {
    return this.post("/api/judgement", { assignmentId, judgeId, recognition });
  }

  submitCategory(assignmentId: string, judgeId: string, category: string): Promise<void> {
    return this.post("/api/judgement", { assignmentId, judgeId, category });
  }

  async nextComparison(judgeId: string): Promise<ComparisonTask | null> {
    const body = await this.request<{ task: ComparisonTask | null }>(
      `/api/comparison/next?judge=${encodeURIComponent(judgeId)}`,
    );
    return body.task;
  }

  submitComparison(
    taskId: string,
    judgeId: string,
    fields: Record<string, string>,
  ): Promise<void> {
    return this.post("/api/comparison", { taskId, judgeId, fields });
  }
}
