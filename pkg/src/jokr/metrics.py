"""Evaluation: temporal keypoint displacement, reconstruction quality,
and a Fréchet distance over pluggable features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .data import VideoPairDataset, frames_to_tensor, masks_to_tensor
from .errors import LengthMismatch
from .infer import render_from_keypoints
from .models import JokrModels

FRAME_DIAGONAL = 2.0 * np.sqrt(2.0)  # diagonal of the [-1,1]^2 frame
COV_EPS = 1e-6


@dataclass
class DisplacementReport:
    mean_adjacent_displacement: float
    per_frame: list[float]


def temporal_displacement(keypoint_sequence, normalize_by_diagonal: bool = False
                          ) -> DisplacementReport:
    """Mean distance between corresponding keypoints in adjacent frames.

    Distances are Euclidean in normalized coordinates; pass
    ``normalize_by_diagonal`` to divide by the frame diagonal as well.
    Translation of the whole sequence leaves the report unchanged.
    """
    seq = [torch.as_tensor(k, dtype=torch.float64) for k in keypoint_sequence]
    if len(seq) < 2:
        raise LengthMismatch("need at least two keypoint sets")
    shape = seq[0].shape
    if any(k.shape != shape for k in seq):
        raise LengthMismatch("keypoint sets differ in shape across the sequence")
    stack = torch.stack(seq)  # [T, K, 2]
    dist = (stack[1:] - stack[:-1]).norm(dim=-1)  # [T-1, K]
    per_frame = dist.mean(dim=-1)
    if normalize_by_diagonal:
        per_frame = per_frame / FRAME_DIAGONAL
    return DisplacementReport(
        mean_adjacent_displacement=float(per_frame.mean()),
        per_frame=[float(v) for v in per_frame],
    )


def iou(pred_mask: torch.Tensor, true_mask: torch.Tensor, threshold: float = 0.5) -> float:
    """Intersection over union of thresholded masks (1.0 when both empty)."""
    p = pred_mask >= threshold
    t = true_mask >= threshold
    union = (p | t).sum().item()
    if union == 0:
        return 1.0
    return float((p & t).sum().item() / union)


def reconstruction_report(models: JokrModels, dataset: VideoPairDataset,
                          composite: bool = False) -> dict:
    """Per-video reconstruction metrics through the full pipeline
    (extract -> project -> silhouette -> texture), averaged per video and
    overall: mean_l1 / mean_mse on frames, mean_iou on silhouettes."""
    models.eval_()
    report: dict = {"per_video": {}}
    overall = {"l1": [], "mse": [], "iou": []}
    for domain in ("A", "B"):
        frames = frames_to_tensor(dataset.frames(domain))
        masks = masks_to_tensor(dataset.masks(domain))
        l1s, mses, ious = [], [], []
        with torch.no_grad():
            for start in range(0, frames.shape[0], 16):
                fr = frames[start:start + 16]
                mk = masks[start:start + 16]
                _, kp = models.extract(fr)
                pred, sil = render_from_keypoints(models, kp, domain, composite)
                l1s.extend((pred - fr).abs().mean(dim=(1, 2, 3)).tolist())
                mses.extend(((pred - fr) ** 2).mean(dim=(1, 2, 3)).tolist())
                ious.extend(iou(sil[i, 0], mk[i, 0]) for i in range(fr.shape[0]))
        video = {"mean_l1": float(np.mean(l1s)), "mean_mse": float(np.mean(mses)),
                 "mean_iou": float(np.mean(ious))}
        report["per_video"][domain] = video
        overall["l1"].extend(l1s)
        overall["mse"].extend(mses)
        overall["iou"].extend(ious)
    report["mean_l1"] = float(np.mean(overall["l1"]))
    report["mean_mse"] = float(np.mean(overall["mse"]))
    report["mean_iou"] = float(np.mean(overall["iou"]))
    return report


def _sqrtm_psd(matrix: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition; negative
    eigenvalues from numerical noise are clamped to zero."""
    vals, vecs = np.linalg.eigh(matrix)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(features_x: np.ndarray, features_y: np.ndarray) -> float:
    """Fréchet distance between Gaussian fits of two feature sets [N, D]:
    ``|mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2))``.

    Covariances get a small diagonal ridge so near-singular fits stay
    well-defined; the cross term is computed in its symmetric form
    ``(S2^(1/2) S1 S2^(1/2))^(1/2)`` to keep everything in eigh territory.
    """
    x = np.asarray(features_x, dtype=np.float64)
    y = np.asarray(features_y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2:
        raise ValueError("feature sets must be [N, D]")
    if x.shape[0] < 2 or y.shape[0] < 2:
        raise ValueError("need at least two samples per side")
    mu_x, mu_y = x.mean(axis=0), y.mean(axis=0)
    cov_x = np.cov(x, rowvar=False) + COV_EPS * np.eye(x.shape[1])
    cov_y = np.cov(y, rowvar=False) + COV_EPS * np.eye(y.shape[1])
    sqrt_y = _sqrtm_psd(cov_y)
    cross = _sqrtm_psd(sqrt_y @ cov_x @ sqrt_y)
    value = float(((mu_x - mu_y) ** 2).sum()
                  + np.trace(cov_x) + np.trace(cov_y) - 2.0 * np.trace(cross))
    return max(value, 0.0)


def distribution_distance(frames_real, frames_generated, extractor) -> float:
    """Fréchet distance between feature statistics of two frame sets.

    ``extractor`` maps a [B, 3, H, W] batch to features (tensor or list
    of tensors); per-frame features are flattened and concatenated.
    """
    def featurize(frames) -> np.ndarray:
        t = frames if isinstance(frames, torch.Tensor) else frames_to_tensor(np.asarray(frames))
        rows = []
        with torch.no_grad():
            for start in range(0, t.shape[0], 32):
                out = extractor(t[start:start + 32])
                parts = out if isinstance(out, (list, tuple)) else [out]
                rows.append(torch.cat([p.reshape(p.shape[0], -1) for p in parts], dim=1))
        return torch.cat(rows).double().numpy()

    return frechet_distance(featurize(frames_real), featurize(frames_generated))
