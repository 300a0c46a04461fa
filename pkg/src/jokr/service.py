"""HTTP inference service: keypoint extraction, edit-and-render, and
asynchronous whole-video retargeting, consumed by the browser editor and
scripted clients.

All endpoints answer JSON (images travel base64-encoded) and stamp their
responses with the loaded checkpoint id; errors use structured bodies
``{"code": ..., "message": ...}``.
"""

from __future__ import annotations

import base64
import hashlib
import io
import queue
import threading
import uuid
import zipfile
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel

from .infer import edit_frame, retarget_frames
from .keypoints import keypoints_to_json
from .models import load_checkpoint


class ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


class Override(BaseModel):
    index: int
    u: float
    v: float


class KeypointsBody(BaseModel):
    frame: str
    domain: str = "A"


class RenderBody(BaseModel):
    frame: str | None = None
    frame_id: str | None = None
    domain: str = "A"
    overrides: list[Override] = []


class RetargetBody(BaseModel):
    source_domain: str = "B"
    apply_affine: bool = True


class Session:
    """One loaded checkpoint plus per-session caches and the job queue."""

    def __init__(self, checkpoint: str | Path):
        self.models, self.manifest = load_checkpoint(checkpoint)
        self.models.eval_()
        self.checkpoint_path = str(checkpoint)
        self.checkpoint_id = f"{self.manifest['config_hash']}-{self.manifest['iteration']}"
        self.resolution = int(self.manifest["resolution"])
        self.num_keypoints = int(self.manifest["K"])
        self.frame_cache: dict[str, torch.Tensor] = {}
        self.jobs: dict[str, dict] = {}
        self._queue: queue.Queue[str] = queue.Queue()
        self._worker: threading.Thread | None = None
        self._dataset = None

    def dataset(self):
        if self._dataset is None:
            from .train import dataset_for_manifest
            self._dataset = dataset_for_manifest(self.manifest)
        return self._dataset

    # -- async retargeting jobs, processed one at a time --------------------

    def submit_retarget(self, source_domain: str, apply_affine: bool) -> str:
        job_id = uuid.uuid4().hex
        self.jobs[job_id] = {"status": "pending",
                             "source_domain": source_domain,
                             "apply_affine": apply_affine}
        self._queue.put(job_id)
        if self._worker is None or not self._worker.is_alive():
            self._worker = threading.Thread(target=self._work, daemon=True)
            self._worker.start()
        return job_id

    def _work(self):
        while True:
            try:
                job_id = self._queue.get(timeout=1.0)
            except queue.Empty:
                return
            job = self.jobs[job_id]
            job["status"] = "running"
            try:
                from .data import frames_to_tensor
                dataset = self.dataset()
                frames = frames_to_tensor(dataset.frames(job["source_domain"]))
                rendered, _ = retarget_frames(self.models, frames,
                                              job["source_domain"], job["apply_affine"])
                job["archive"] = _zip_frames(rendered)
                job["status"] = "done"
            except Exception as exc:  # surfaced through GET as JobFailed
                job["status"] = "error"
                job["message"] = str(exc)


def _decode_frame(b64_png: str, resolution: int) -> tuple[torch.Tensor, str]:
    try:
        raw = base64.b64decode(b64_png)
        img = Image.open(io.BytesIO(raw)).convert("RGB")
    except Exception as exc:
        raise ServiceError(400, "BadImage", f"could not decode frame: {exc}") from exc
    frame_id = hashlib.sha1(raw).hexdigest()[:16]
    if img.size != (resolution, resolution):
        img = img.resize((resolution, resolution), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return torch.from_numpy(arr.transpose(2, 0, 1)), frame_id


def _encode_frame(frame: torch.Tensor) -> str:
    arr = (frame.clamp(0, 1).numpy().transpose(1, 2, 0) * 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _zip_frames(frames: torch.Tensor) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
        for i, frame in enumerate(frames):
            arr = (frame.clamp(0, 1).numpy().transpose(1, 2, 0) * 255).astype(np.uint8)
            png = io.BytesIO()
            Image.fromarray(arr).save(png, format="PNG")
            info = zipfile.ZipInfo(f"{i:05d}.png", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, png.getvalue())
    return buf.getvalue()


def _check_domain(domain: str):
    if domain not in ("A", "B"):
        raise ServiceError(400, "BadDomain", f"domain must be 'A' or 'B', got {domain!r}")


def create_app(checkpoint: str | Path | None = None) -> FastAPI:
    """Build the service; ``checkpoint=None`` starts unloaded (endpoints
    answer 409 until a checkpoint is supplied)."""
    app = FastAPI(title="jokr inference service")
    app.state.session = Session(checkpoint) if checkpoint else None

    def session() -> Session:
        if app.state.session is None:
            raise ServiceError(409, "NotLoaded", "no checkpoint loaded")
        return app.state.session

    @app.exception_handler(ServiceError)
    async def _service_error(_request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": exc.message})

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content={"code": "BadRequest", "message": str(exc)})

    @app.get("/model")
    def model_info():
        s = session()
        return {"K": s.num_keypoints, "resolution": s.resolution,
                "checkpoint_id": s.checkpoint_id, "domains": ["A", "B"]}

    @app.post("/keypoints")
    def keypoints(body: KeypointsBody):
        s = session()
        _check_domain(body.domain)
        frame, frame_id = _decode_frame(body.frame, s.resolution)
        s.frame_cache[frame_id] = frame
        with torch.no_grad():
            _, kp = s.models.extract(frame[None])
        payload = keypoints_to_json(kp[0])
        payload.update(frame_id=frame_id, checkpoint_id=s.checkpoint_id)
        return payload

    @app.post("/render")
    def render(body: RenderBody):
        s = session()
        _check_domain(body.domain)
        if body.frame is not None:
            frame, frame_id = _decode_frame(body.frame, s.resolution)
            s.frame_cache[frame_id] = frame
        elif body.frame_id is not None:
            frame = s.frame_cache.get(body.frame_id)
            if frame is None:
                raise ServiceError(400, "BadImage", f"unknown frame_id {body.frame_id!r}")
        else:
            raise ServiceError(400, "BadImage", "provide frame or frame_id")
        overrides = []
        for o in body.overrides:
            if not 0 <= o.index < s.num_keypoints:
                raise ServiceError(400, "BadOverride",
                                   f"keypoint index {o.index} outside [0, {s.num_keypoints})")
            if abs(o.u) > 1 or abs(o.v) > 1:
                raise ServiceError(400, "BadOverride",
                                   f"coordinates ({o.u}, {o.v}) outside [-1, 1]^2")
            overrides.append((o.index, o.u, o.v))
        rendered, kp = edit_frame(s.models, frame, body.domain, overrides)
        payload = keypoints_to_json(kp)
        return {"image": _encode_frame(rendered), "keypoints": payload,
                "checkpoint_id": s.checkpoint_id}

    @app.post("/retarget")
    def retarget_submit(body: RetargetBody):
        s = session()
        _check_domain(body.source_domain)
        job_id = s.submit_retarget(body.source_domain, body.apply_affine)
        return {"job_id": job_id, "checkpoint_id": s.checkpoint_id}

    @app.get("/retarget/{job_id}")
    def retarget_status(job_id: str):
        s = session()
        job = s.jobs.get(job_id)
        if job is None:
            raise ServiceError(404, "UnknownJob", f"no retarget job {job_id!r}")
        if job["status"] == "error":
            raise ServiceError(500, "JobFailed", job.get("message", "retarget failed"))
        if job["status"] != "done":
            return JSONResponse(status_code=202,
                                content={"status": job["status"],
                                         "checkpoint_id": s.checkpoint_id})
        return Response(content=job["archive"], media_type="application/zip")

    return app
