/**
 * Editor session state: extracted keypoints, the override list built up
 * by dragging markers, and an undo history whose bottom entry is the
 * untouched extraction. Pure logic, no DOM; the canvas layer and the
 * request scheduler sit on top.
 */

import { CanvasPoint, NormalizedPoint, clampNormalized, toNormalized } from "./coords.js";
import { KeypointsResponse } from "./api.js";
import { UndoHistory } from "./history.js";
import { KeypointPayload, Override, RenderRequest, validateKeypointPayload,
         validateOverride } from "./schema.js";

export type MarkerState = "untouched" | "moved";

export interface Marker {
  index: number;
  current: NormalizedPoint;
  /** Where the extractor put this keypoint; the ghost marker. */
  original: NormalizedPoint;
  state: MarkerState;
}

const EPSILON = 1e-9;

function cloneOverrides(overrides: Override[]): Override[] {
  return overrides.map((o) => ({ ...o }));
}

export class EditorSession {
  readonly k: number;
  readonly frameId: string;
  readonly domain: string;
  private readonly original: [number, number][];
  private overrides = new Map<number, Override>();
  private history: UndoHistory<Override[]>;
  lastRenderImage: string | null = null;

  constructor(extraction: KeypointsResponse, domain: string) {
    validateKeypointPayload(extraction);
    this.k = extraction.K;
    this.frameId = extraction.frame_id;
    this.domain = domain;
    this.original = extraction.points.map((p) => [p[0], p[1]]);
    this.history = new UndoHistory<Override[]>([]);
  }

  markers(): Marker[] {
    return this.original.map(([u, v], index) => {
      const override = this.overrides.get(index);
      return {
        index,
        original: { u, v },
        current: override ? { u: override.u, v: override.v } : { u, v },
        state: override ? "moved" : "untouched",
      } as Marker;
    });
  }

  /** Record a drag position for one marker; positions outside the canvas
   * clamp to the normalized box. Not yet committed to history. */
  dragTo(index: number, position: CanvasPoint, canvasSize: number): Override {
    const clamped = clampNormalized(toNormalized(position, canvasSize));
    const override = validateOverride(
      { index, u: clamped.u, v: clamped.v }, this.k);
    this.overrides.set(index, override);
    return override;
  }

  /** Push the current override list as an undo point (call on drag end). */
  commit(): void {
    this.history.push(cloneOverrides(this.overrideList()));
  }

  /** Pop one undo point and restore the previous override list; with
   * nothing left to undo this lands on the initial (empty) list. */
  undo(): RenderRequest {
    const snapshot = this.history.undo();
    this.overrides = new Map(snapshot.map((o) => [o.index, { ...o }]));
    return this.renderPayload();
  }

  canUndo(): boolean {
    return this.history.canUndo();
  }

  overrideList(): Override[] {
    return [...this.overrides.values()].sort((a, b) => a.index - b.index);
  }

  renderPayload(): RenderRequest {
    const overrides = this.overrideList().map((o) => validateOverride(o, this.k));
    return { frame_id: this.frameId, domain: this.domain, overrides };
  }

  /** Effective keypoints (original with overrides applied), in the wire
   * interchange format; what export writes next to the PNG. */
  exportKeypoints(): KeypointPayload {
    const points = this.markers().map((m) => [m.current.u, m.current.v]) as
      [number, number][];
    return validateKeypointPayload({ K: this.k, points, convention: "center_normalized" });
  }

  /** Re-import an exported keypoint file: overrides are reconstructed for
   * every point that differs from the extraction, reproducing the marker
   * layout the file was exported from. */
  importKeypoints(raw: unknown): void {
    const payload = validateKeypointPayload(raw);
    if (payload.K !== this.k) {
      throw new Error(`imported file has K=${payload.K}, session has K=${this.k}`);
    }
    this.overrides = new Map();
    payload.points.forEach(([u, v], index) => {
      const [ou, ov] = this.original[index];
      if (Math.abs(u - ou) > EPSILON || Math.abs(v - ov) > EPSILON) {
        this.overrides.set(index, { index, u, v });
      }
    });
    this.commit();
  }
}
