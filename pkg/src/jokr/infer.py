"""Inference on a trained checkpoint: motion retargeting, short-clip
synchronization, and keypoint editing."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch

from .data import VideoPairDataset, frames_to_tensor
from .errors import IndexOutOfRange
from .keypoints import apply_affine, invert_affine
from .models import JokrModels, load_checkpoint

_CHUNK = 16  # frames rendered per forward pass


@dataclass
class RetargetRequest:
    checkpoint: str | Path
    source_domain: str = "B"
    apply_learned_affine: bool = True
    frame_range: tuple[int, int] | None = None


def _other(domain: str) -> str:
    return "B" if domain == "A" else "A"


def render_from_keypoints(models: JokrModels, keypoints: torch.Tensor, domain: str,
                          composite: bool = True):
    """Keypoints -> confidence maps -> silhouette -> textured frame.

    With ``composite`` the texture is multiplied by the generated
    silhouette, putting the object on a black background. Returns
    (frames [B,3,H,W], silhouettes [B,1,H,W]).
    """
    maps = models.project(keypoints)
    silhouette = models.generate_silhouette(maps, domain)
    frame = models.refine(silhouette, domain)
    if composite:
        frame = frame * silhouette
    return frame, silhouette


def retarget_frames(models: JokrModels, frames: torch.Tensor, source_domain: str,
                    apply_learned_affine: bool = True, composite: bool = True):
    """Render source frames in the other domain's shape and texture.

    The learned affine was fit to carry domain-B keypoints into domain
    A's distribution, so retargeting B->A applies it forward and A->B
    applies its inverse. Returns (frames, keypoint sets) with one output
    per source frame.
    """
    target = _other(source_domain)
    models.eval_()
    outs, kps = [], []
    with torch.no_grad():
        for start in range(0, frames.shape[0], _CHUNK):
            chunk = frames[start:start + _CHUNK]
            _, kp = models.extract(chunk)
            if apply_learned_affine:
                matrix = models.affine.matrix
                if source_domain == "A":
                    matrix = invert_affine(matrix)
                kp = apply_affine(kp, matrix)
            rendered, _ = render_from_keypoints(models, kp, target, composite)
            outs.append(rendered)
            kps.append(kp)
    if not outs:
        h = w = models.resolution
        return torch.empty(0, 3, h, w), torch.empty(0, models.config.num_keypoints, 2)
    return torch.cat(outs), torch.cat(kps)


def retarget(request: RetargetRequest, dataset: VideoPairDataset | None = None,
             composite: bool = True):
    """Full retargeting for a checkpoint: loads the models (and, if not
    supplied, the dataset recorded in the manifest), renders every source
    frame in the target domain. Output length equals source length."""
    models, manifest = load_checkpoint(request.checkpoint)
    if dataset is None:
        from .train import dataset_for_manifest
        dataset = dataset_for_manifest(manifest)
    frames = frames_to_tensor(dataset.frames(request.source_domain))
    if request.frame_range is not None:
        start, stop = request.frame_range
        frames = frames[start:stop]
    return retarget_frames(models, frames, request.source_domain,
                           request.apply_learned_affine, composite)


def synchronize(request: RetargetRequest, dataset: VideoPairDataset | None = None,
                composite: bool = True):
    """Short-clip alignment mode: identical machinery to retargeting; on
    clips of a few dozen frames the limited motion range makes the output
    a temporal re-alignment of existing poses."""
    return retarget(request, dataset=dataset, composite=composite)


def edit_frame(models: JokrModels, frame: torch.Tensor, domain: str,
               overrides=(), composite: bool = True):
    """Reconstruct a frame with some keypoints manually moved.

    ``overrides`` is a list of (keypoint_index, new_u, new_v). With no
    overrides this is exactly the reconstruction path, bit for bit.
    Returns (frame [3,H,W], effective keypoints [K,2]).
    """
    if frame.ndim == 3:
        frame = frame[None]
    k = models.config.num_keypoints
    models.eval_()
    with torch.no_grad():
        _, kp = models.extract(frame)
        kp = kp.clone()
        for index, new_u, new_v in overrides:
            if not 0 <= int(index) < k:
                raise IndexOutOfRange(f"keypoint index {index} outside [0, {k})")
            if abs(new_u) > 1 or abs(new_v) > 1:
                raise ValueError(f"override ({new_u}, {new_v}) outside [-1, 1]^2")
            kp[0, int(index), 0] = float(new_u)
            kp[0, int(index), 1] = float(new_v)
        rendered, _ = render_from_keypoints(models, kp, domain, composite)
    return rendered[0], kp[0]
