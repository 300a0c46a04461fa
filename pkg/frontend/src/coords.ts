/**
 * Canvas <-> normalized coordinate mapping.
 *
 * Keypoints live in [-1, 1] x [-1, 1] with the origin at the image
 * center (u horizontal, v vertical). The canvas shows the frame
 * stretched to `size` CSS pixels, so the two maps below are exact
 * inverses of each other (round trip well under half a pixel).
 */

export interface NormalizedPoint {
  u: number;
  v: number;
}

export interface CanvasPoint {
  x: number;
  y: number;
}

export function toNormalized(p: CanvasPoint, size: number): NormalizedPoint {
  return { u: (2 * p.x) / size - 1, v: (2 * p.y) / size - 1 };
}

export function toCanvas(p: NormalizedPoint, size: number): CanvasPoint {
  return { x: ((p.u + 1) * size) / 2, y: ((p.v + 1) * size) / 2 };
}

/** Drags outside the canvas clamp to the edge of the normalized box. */
export function clampNormalized(p: NormalizedPoint): NormalizedPoint {
  const clamp = (x: number) => Math.min(1, Math.max(-1, x));
  return { u: clamp(p.u), v: clamp(p.v) };
}
