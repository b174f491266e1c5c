/** Typed client for the annotation service. */

import type {
  ApiErrorBody, RegionQuadruple, ScribblePayload, SegmentationResponse,
  SessionInfo,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
    expectedRevision?: number,
  ): Promise<T> {
    const headers: Record<string, string> = {};
    if (body !== undefined) headers["Content-Type"] = "application/json";
    if (expectedRevision !== undefined) {
      headers["X-Expected-Revision"] = String(expectedRevision);
    }
    const resp = await this.fetchFn(this.baseUrl + path, {
      method,
      headers,
      body: body !== undefined ? JSON.stringify(body) : undefined,
    });
    if (!resp.ok) {
      let parsed: Partial<ApiErrorBody> = {};
      try {
        parsed = (await resp.json()) as ApiErrorBody;
      } catch {
        // non-JSON error body; fall through to the generic message
      }
      throw new ApiError(
        resp.status,
        parsed.code ?? "unknown_error",
        parsed.message ?? `request failed with status ${resp.status}`);
    }
    return (await resp.json()) as T;
  }

  createSessionFromImage(pngBase64: string): Promise<SessionInfo> {
    return this.request("POST", "/session", { image_png: pngBase64 });
  }

  createSessionFromScene(sceneId: string): Promise<SessionInfo> {
    return this.request("POST", "/session", { scene_id: sceneId });
  }

  submitExtremePoints(
    sessionId: string,
    regions: RegionQuadruple[],
    expectedRevision?: number,
  ): Promise<SegmentationResponse> {
    return this.request(
      "POST", `/session/${sessionId}/extreme-points`,
      { regions }, expectedRevision);
  }

  submitScribbles(
    sessionId: string,
    scribbles: ScribblePayload[],
    expectedRevision?: number,
  ): Promise<SegmentationResponse> {
    return this.request(
      "POST", `/session/${sessionId}/scribbles`,
      { scribbles }, expectedRevision);
  }

  getSegmentation(
    sessionId: string,
    revision?: number,
  ): Promise<SegmentationResponse> {
    const query = revision !== undefined ? `?revision=${revision}` : "";
    return this.request("GET", `/session/${sessionId}/segmentation${query}`);
  }
}
