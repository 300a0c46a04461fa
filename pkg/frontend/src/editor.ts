/**
 * Canvas wiring: marker rendering (blue untouched, red moved, green
 * ghost at the original location of every moved keypoint), drag
 * handling, debounced renders, undo and export.
 */

import { ApiClient, ApiError, RenderResponse } from "./api.js";
import { toCanvas } from "./coords.js";
import { RenderScheduler } from "./debounce.js";
import { RenderRequest } from "./schema.js";
import { EditorSession } from "./session.js";

const MARKER_RADIUS = 6;

export class Editor {
  private session: EditorSession | null = null;
  private frameBitmap: ImageBitmap | null = null;
  private dragIndex: number | null = null;
  private scheduler: RenderScheduler<RenderRequest, RenderResponse>;

  constructor(private api: ApiClient,
              private canvas: HTMLCanvasElement,
              private resultImg: HTMLImageElement,
              private statusBox: HTMLElement) {
    this.scheduler = new RenderScheduler(
      (payload) => this.api.render(payload),
      (_payload, result) => this.showRender(result),
      (error) => this.showError(error),
    );
    canvas.addEventListener("pointerdown", (e) => this.onPointerDown(e));
    canvas.addEventListener("pointermove", (e) => this.onPointerMove(e));
    window.addEventListener("pointerup", () => this.onPointerUp());
  }

  async loadFrame(file: File, domain: string): Promise<void> {
    try {
      const bytes = new Uint8Array(await file.arrayBuffer());
      let binary = "";
      bytes.forEach((b) => { binary += String.fromCharCode(b); });
      const b64 = btoa(binary);
      const extraction = await this.api.keypoints(b64, domain);
      this.session = new EditorSession(extraction, domain);
      this.frameBitmap = await createImageBitmap(file);
      this.status(`loaded frame ${extraction.frame_id}: K=${extraction.K}`);
      this.scheduler.immediate(this.session.renderPayload());
      this.draw();
    } catch (error) {
      this.showError(error);
    }
  }

  undo(): void {
    if (!this.session) return;
    this.scheduler.immediate(this.session.undo());
    this.draw();
  }

  exportResult(): void {
    if (!this.session || !this.session.lastRenderImage) return;
    download(`edited.png`, `data:image/png;base64,${this.session.lastRenderImage}`);
    const json = JSON.stringify(this.session.exportKeypoints(), null, 2);
    download(`keypoints.json`,
             `data:application/json;charset=utf-8,${encodeURIComponent(json)}`);
  }

  async importKeypoints(file: File): Promise<void> {
    if (!this.session) return;
    try {
      this.session.importKeypoints(JSON.parse(await file.text()));
      this.scheduler.immediate(this.session.renderPayload());
      this.draw();
    } catch (error) {
      this.showError(error);
    }
  }

  private onPointerDown(event: PointerEvent): void {
    if (!this.session) return;
    const { x, y } = this.eventPosition(event);
    let best: number | null = null;
    let bestDist = 12;
    for (const marker of this.session.markers()) {
      const p = toCanvas(marker.current, this.canvas.width);
      const dist = Math.hypot(p.x - x, p.y - y);
      if (dist < bestDist) {
        best = marker.index;
        bestDist = dist;
      }
    }
    this.dragIndex = best;
  }

  private onPointerMove(event: PointerEvent): void {
    if (this.session === null || this.dragIndex === null) return;
    this.session.dragTo(this.dragIndex, this.eventPosition(event), this.canvas.width);
    this.scheduler.schedule(this.session.renderPayload());
    this.draw();
  }

  private onPointerUp(): void {
    if (this.session && this.dragIndex !== null) {
      this.session.commit();
    }
    this.dragIndex = null;
  }

  private eventPosition(event: PointerEvent) {
    const rect = this.canvas.getBoundingClientRect();
    return { x: ((event.clientX - rect.left) / rect.width) * this.canvas.width,
             y: ((event.clientY - rect.top) / rect.height) * this.canvas.height };
  }

  private showRender(result: RenderResponse): void {
    if (this.session) {
      this.session.lastRenderImage = result.image;
    }
    this.resultImg.src = `data:image/png;base64,${result.image}`;
  }

  private showError(error: unknown): void {
    const message = error instanceof ApiError
      ? `${error.code}: ${error.message}`
      : String(error);
    this.status(message, true);
  }

  private status(message: string, isError = false): void {
    this.statusBox.textContent = message;
    this.statusBox.className = isError ? "status error" : "status";
  }

  draw(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    if (this.frameBitmap) {
      ctx.drawImage(this.frameBitmap, 0, 0, this.canvas.width, this.canvas.height);
    }
    if (!this.session) return;
    for (const marker of this.session.markers()) {
      if (marker.state === "moved") {
        // ghost at the original location stays green, moved marker is red
        drawMarker(ctx, toCanvas(marker.original, this.canvas.width), "#2e9e44", true);
        drawMarker(ctx, toCanvas(marker.current, this.canvas.width), "#d23c3c");
      } else {
        drawMarker(ctx, toCanvas(marker.current, this.canvas.width), "#3a6fd8");
      }
    }
  }
}

function drawMarker(ctx: CanvasRenderingContext2D,
                    p: { x: number; y: number }, color: string, ghost = false): void {
  ctx.beginPath();
  ctx.arc(p.x, p.y, MARKER_RADIUS, 0, 2 * Math.PI);
  ctx.fillStyle = color;
  ctx.globalAlpha = ghost ? 0.5 : 1.0;
  ctx.fill();
  ctx.globalAlpha = 1.0;
  ctx.strokeStyle = "#ffffff";
  ctx.stroke();
}

function download(filename: string, href: string): void {
  const link = document.createElement("a");
  link.href = href;
  link.download = filename;
  link.click();
}
