import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

function fakeFetch(status: number, body: unknown) {
  return async () => new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("api client", () => {
  it("returns parsed model info", async () => {
    const client = new ApiClient("", fakeFetch(200, {
      K: 6, resolution: 64, checkpoint_id: "x-1", domains: ["A", "B"] }));
    const info = await client.model();
    expect(info.K).toBe(6);
    expect(info.domains).toEqual(["A", "B"]);
  });

  it("validates keypoint responses against the schema", async () => {
    const client = new ApiClient("", fakeFetch(200, {
      K: 2, points: [[0, 0], [5, 0]], convention: "center_normalized",
      frame_id: "f", checkpoint_id: "c" }));
    await expect(client.keypoints("png", "A")).rejects.toThrow(/inside/);
  });

  it("surfaces structured error bodies as ApiError", async () => {
    const client = new ApiClient("", fakeFetch(409, {
      code: "NotLoaded", message: "no checkpoint loaded" }));
    const error = await client.model().catch((e) => e);
    expect(error).toBeInstanceOf(ApiError);
    expect(error.status).toBe(409);
    expect(error.code).toBe("NotLoaded");
    expect(error.message).toBe("no checkpoint loaded");
  });

  it("handles non-JSON error bodies", async () => {
    const client = new ApiClient("", async () =>
      new Response("<html>oops</html>", { status: 502 }));
    const error = await client.model().catch((e) => e);
    expect(error).toBeInstanceOf(ApiError);
    expect(error.status).toBe(502);
    expect(error.code).toBe("HttpError");
  });

  it("posts render payloads unchanged", async () => {
    let captured: unknown = null;
    const client = new ApiClient("", async (_url, init) => {
      captured = JSON.parse(String(init?.body));
      return new Response(JSON.stringify({
        image: "AAAA",
        keypoints: { K: 1, points: [[0, 0]], convention: "center_normalized" },
        checkpoint_id: "c" }), { status: 200 });
    });
    const payload = { frame_id: "f", domain: "A",
                      overrides: [{ index: 0, u: 0.5, v: -0.5 }] };
    const result = await client.render(payload);
    expect(captured).toEqual(payload);
    expect(result.image).toBe("AAAA");
  });
});
