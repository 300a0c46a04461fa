/**
 * Wire schemas shared with the inference service: the keypoint
 * interchange payload and the render-override list. Everything the UI
 * sends is validated here first, so an override with a bad index or an
 * out-of-box coordinate can never reach the server.
 */

export interface KeypointPayload {
  K: number;
  points: [number, number][];
  convention: "center_normalized";
}

export interface Override {
  index: number;
  u: number;
  v: number;
}

export interface RenderRequest {
  frame_id?: string;
  frame?: string;
  domain: string;
  overrides: Override[];
}

export function validateKeypointPayload(raw: unknown): KeypointPayload {
  if (typeof raw !== "object" || raw === null) {
    throw new Error("keypoint payload must be an object");
  }
  const obj = raw as Record<string, unknown>;
  if (obj.convention !== "center_normalized") {
    throw new Error(`unsupported convention ${String(obj.convention)}`);
  }
  if (typeof obj.K !== "number" || !Number.isInteger(obj.K) || obj.K < 1) {
    throw new Error("K must be a positive integer");
  }
  if (!Array.isArray(obj.points) || obj.points.length !== obj.K) {
    throw new Error("points must be an array of length K");
  }
  for (const point of obj.points) {
    if (!Array.isArray(point) || point.length !== 2 ||
        typeof point[0] !== "number" || typeof point[1] !== "number" ||
        !Number.isFinite(point[0]) || !Number.isFinite(point[1])) {
      throw new Error("each point must be a finite [u, v] pair");
    }
    if (Math.abs(point[0]) > 1 || Math.abs(point[1]) > 1) {
      throw new Error("points must lie inside [-1, 1]^2");
    }
  }
  return { K: obj.K, points: obj.points as [number, number][], convention: "center_normalized" };
}

export function validateOverride(override: Override, k: number): Override {
  if (!Number.isInteger(override.index) || override.index < 0 || override.index >= k) {
    throw new Error(`override index ${override.index} outside [0, ${k})`);
  }
  if (Math.abs(override.u) > 1 || Math.abs(override.v) > 1) {
    throw new Error(`override (${override.u}, ${override.v}) outside [-1, 1]^2`);
  }
  return override;
}
