/** Typed client for the inference service's JSON-over-HTTP API. */

import { KeypointPayload, RenderRequest, validateKeypointPayload } from "./schema.js";

export interface ModelInfo {
  K: number;
  resolution: number;
  checkpoint_id: string;
  domains: string[];
}

export interface KeypointsResponse extends KeypointPayload {
  frame_id: string;
  checkpoint_id: string;
}

export interface RenderResponse {
  image: string; // base64 PNG
  keypoints: KeypointPayload;
  checkpoint_id: string;
}

export class ApiError extends Error {
  constructor(public status: number, public code: string, message: string) {
    super(message);
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(private baseUrl: string = "",
              private fetchFn: FetchLike = (...args) => fetch(...args)) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, init);
    if (!response.ok) {
      let code = "HttpError";
      let message = `${response.status}`;
      try {
        const body = await response.json();
        code = body.code ?? code;
        message = body.message ?? message;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, code, message);
    }
    return (await response.json()) as T;
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  model(): Promise<ModelInfo> {
    return this.request<ModelInfo>("/model");
  }

  async keypoints(framePngB64: string, domain: string): Promise<KeypointsResponse> {
    const body = await this.post<KeypointsResponse>(
      "/keypoints", { frame: framePngB64, domain });
    validateKeypointPayload(body);
    return body;
  }

  render(payload: RenderRequest): Promise<RenderResponse> {
    return this.post<RenderResponse>("/render", payload);
  }
}
