/** Typed client for the labeling service.
 *
 * The transport is injectable so tests can replay recorded responses; the
 * default goes through fetch against the same origin the page is served
 * from.
 */

import type {
  AnnotationsResponse,
  ApiErrorBody,
  OverlayResponse,
  ProjectSummary,
  PutAnnotationsBody,
  SolveResponse,
  TriangulateResponse,
} from "./types.js";

export interface TransportResponse {
  status: number;
  json(): Promise<unknown>;
}

export type Transport = (
  path: string,
  init?: { method?: string; body?: string; headers?: Record<string, string> },
) => Promise<TransportResponse>;

/** Service rejected the request; carries the structured error body verbatim. */
export class ApiRequestError extends Error {
  constructor(
    readonly status: number,
    readonly body: ApiErrorBody,
  ) {
    super(`${body.error}: ${body.message}`);
  }
}

const defaultTransport: Transport = (path, init) =>
  fetch(path, {
    method: init?.method ?? "GET",
    body: init?.body,
    headers: init?.headers,
  });

export class ApiClient {
  constructor(private readonly transport: Transport = defaultTransport) {}

  private async request<T>(path: string, init?: Parameters<Transport>[1]): Promise<T> {
    const response = await this.transport(path, init);
    const payload = (await response.json()) as T | ApiErrorBody;
    if (response.status >= 400) {
      throw new ApiRequestError(response.status, payload as ApiErrorBody);
    }
    return payload as T;
  }

  getProject(): Promise<ProjectSummary> {
    return this.request("/api/project");
  }

  getAnnotations(frameId: string): Promise<AnnotationsResponse> {
    return this.request(`/api/frames/${frameId}/annotations`);
  }

  putAnnotations(
    frameId: string,
    body: PutAnnotationsBody,
  ): Promise<{ revision: number }> {
    return this.request(`/api/frames/${frameId}/annotations`, {
      method: "PUT",
      body: JSON.stringify(body),
      headers: { "content-type": "application/json" },
    });
  }

  triangulate(sessionId: string): Promise<TriangulateResponse> {
    return this.request(`/api/sessions/${sessionId}/triangulate`, { method: "POST" });
  }

  solve(sessionId: string): Promise<SolveResponse> {
    return this.request(`/api/sessions/${sessionId}/solve`, { method: "POST" });
  }

  getOverlay(frameId: string): Promise<OverlayResponse> {
    return this.request(`/api/frames/${frameId}/overlay`);
  }

  imageUrl(frameId: string): string {
    return `/api/frames/${frameId}/image`;
  }
}
