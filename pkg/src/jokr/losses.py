"""The training objective, term by term.

Every loss here is a pure, differentiable function of torch tensors and
returns a nonnegative scalar. The formulas are written as sums over whole
videos; we aggregate per batch by taking means so the term weights stay
scale-free across video lengths.
"""

from __future__ import annotations

from typing import Callable, Mapping

import torch
import torch.nn.functional as F

from .config import LossWeights
from .keypoints import apply_affine, warp_frame

EPS_LOG = 1e-8  # floor inside the silhouette log


def loss_seg(pred_mask: torch.Tensor, true_mask: torch.Tensor) -> torch.Tensor:
    """Mean squared error between predicted and reference silhouettes."""
    if pred_mask.shape != true_mask.shape:
        raise ValueError("mask shapes differ")
    return ((pred_mask - true_mask) ** 2).mean()


def loss_l1(pred_frame: torch.Tensor, true_frame: torch.Tensor) -> torch.Tensor:
    """Mean absolute pixel error."""
    if pred_frame.shape != true_frame.shape:
        raise ValueError("frame shapes differ")
    return (pred_frame - true_frame).abs().mean()


def _feature_mse(fx, fy) -> torch.Tensor:
    return ((fx - fy) ** 2).mean()


def loss_lpips(pred_frame: torch.Tensor, true_frame: torch.Tensor, extractor) -> torch.Tensor:
    """Squared distance between frozen feature maps of the two frames.

    ``extractor`` maps an image batch to a feature tensor or a sequence of
    feature tensors (multi-scale); sequences contribute the mean of their
    per-level squared distances.
    """
    fx, fy = extractor(pred_frame), extractor(true_frame)
    if isinstance(fx, (list, tuple)):
        levels = [_feature_mse(a, b) for a, b in zip(fx, fy)]
        return torch.stack(levels).mean()
    return _feature_mse(fx, fy)


def _bce_to(outputs: torch.Tensor, target_value: float) -> torch.Tensor:
    target = torch.full_like(outputs, target_value)
    return F.binary_cross_entropy(outputs, target)


def loss_domain_confusion(
    discriminator,
    kp_a: torch.Tensor,
    kp_b_transformed: torch.Tensor,
    symmetric: bool = False,
) -> torch.Tensor:
    """Confusion objective on the extractor side.

    As printed, both domains are pushed toward label 1, which drags the
    first domain's keypoints toward the second's distribution; the
    symmetric variant targets 0.5 for both instead. Averaged over all
    samples of both domains. Freezing the discriminator is the caller's
    job; gradients here are meant for the extractor and the learned
    affine only.
    """
    out = torch.cat([discriminator(kp_a), discriminator(kp_b_transformed)], dim=0)
    return _bce_to(out, 0.5 if symmetric else 1.0)


def loss_discriminator(
    discriminator, kp_a: torch.Tensor, kp_b_transformed: torch.Tensor
) -> torch.Tensor:
    """Discriminator objective: first domain labeled 0, second labeled 1,
    averaged over all samples. Keypoints should be detached by the caller
    so only the discriminator learns from this term."""
    out_a = discriminator(kp_a)
    out_b = discriminator(kp_b_transformed)
    out = torch.cat([out_a, out_b], dim=0)
    target = torch.cat([torch.zeros_like(out_a), torch.ones_like(out_b)], dim=0)
    return F.binary_cross_entropy(out, target)


def loss_temporal(kp_t: torch.Tensor, kp_t1: torch.Tensor) -> torch.Tensor:
    """Mean over keypoints of the squared distance to the next frame's
    corresponding keypoint. Symmetric in its arguments."""
    if kp_t.shape != kp_t1.shape:
        raise ValueError("keypoint set shapes differ")
    return ((kp_t - kp_t1) ** 2).sum(dim=-1).mean()


def loss_equivariance(extractor, frames: torch.Tensor, matrix: torch.Tensor) -> torch.Tensor:
    """Keypoints must commute with affine warps of the input.

    Compares the transformed keypoints of the original frames against the
    keypoints of the warped frames (bilinear, zero fill) with a mean L1.
    Exactly zero for the identity transform. Raises SingularTransform for
    non-invertible ``matrix``.
    """
    _, kp = extractor(frames)
    _, kp_of_warped = extractor(warp_frame(frames, matrix))
    return (apply_affine(kp, matrix) - kp_of_warped).abs().mean()


def loss_separation(keypoints: torch.Tensor, delta: float) -> torch.Tensor:
    """Hinge on pairwise squared distances:
    ``(1/K^2) * sum_{l != r} max(0, delta - |k_l - k_r|^2)``,
    averaged over the batch. Invariant to keypoint order.
    """
    kp = keypoints if keypoints.ndim == 3 else keypoints[None]
    k = kp.shape[1]
    diff = kp[:, :, None, :] - kp[:, None, :, :]
    sq = (diff * diff).sum(dim=-1)  # [B, K, K]
    hinge = torch.relu(delta - sq)
    off_diag = hinge.sum(dim=(1, 2)) - hinge.diagonal(dim1=1, dim2=2).sum(dim=1)
    return (off_diag / (k * k)).mean()


def loss_silhouette(heatmaps: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Negative log of the heatmap mass lying inside the silhouette,
    averaged over channels (and batch). Masks at a different resolution
    are area-downsampled to the heatmap grid first; an epsilon floor keeps
    the log finite when a heatmap sits fully outside the mask."""
    hm = heatmaps if heatmaps.ndim == 4 else heatmaps[None]
    m = mask
    if m.ndim == 2:
        m = m[None]
    if m.ndim == 3:
        m = m[:, None]
    if m.shape[-2:] != hm.shape[-2:]:
        m = F.adaptive_avg_pool2d(m, hm.shape[-2:])
    mass = (hm * m).sum(dim=(-2, -1)).clamp_min(EPS_LOG)
    return (-torch.log(mass)).mean()


def combine_stage1(terms: Mapping[str, torch.Tensor], weights: LossWeights):
    """Weighted sum of the six shape-stage terms; returns (total, breakdown).

    ``terms`` must carry seg, dc, tmp, eq, sep and sill entries.
    """
    scale = {
        "seg": weights.lambda_seg,
        "dc": weights.lambda_dc,
        "tmp": weights.lambda_tmp,
        "eq": weights.lambda_eq,
        "sep": weights.lambda_sep,
        "sill": weights.lambda_sill,
    }
    missing = set(scale) - set(terms)
    if missing:
        raise ValueError(f"missing stage-1 terms: {sorted(missing)}")
    total = sum(scale[name] * terms[name] for name in scale)
    return total, {name: float(torch.as_tensor(terms[name]).detach()) for name in scale}


def combine_stage2(terms: Mapping[str, torch.Tensor], weights: LossWeights):
    """Texture-stage objective: l1 + lambda_lpips * lpips."""
    missing = {"l1", "lpips"} - set(terms)
    if missing:
        raise ValueError(f"missing stage-2 terms: {sorted(missing)}")
    total = terms["l1"] + weights.lambda_lpips * terms["lpips"]
    return total, {name: float(torch.as_tensor(terms[name]).detach()) for name in ("l1", "lpips")}


# ---------------------------------------------------------------------------
# Perceptual feature extractors. The loss above only requires a frozen,
# deterministic callable; anything from an identity map to a pretrained
# perceptual network can be plugged in through the registry.


class IdentityFeatures:
    """Features = pixels; turns the perceptual loss into pixel MSE."""

    def __call__(self, frames: torch.Tensor) -> torch.Tensor:
        return frames


class LinearFeatures:
    """Fixed linear map on flattened pixels, mainly for oracle tests."""

    def __init__(self, weight: torch.Tensor):
        self.weight = weight.detach()

    def __call__(self, frames: torch.Tensor) -> torch.Tensor:
        flat = frames.reshape(frames.shape[0], -1)
        return flat @ self.weight.T.to(flat.dtype)


class ConvFeatures:
    """Frozen random multi-scale conv features.

    A lightweight stand-in for a pretrained perceptual network: three
    strided conv + ReLU stages with seed-fixed weights, returning the
    activations of every stage. Deterministic and dependency-free.
    """

    def __init__(self, channels: int = 32, seed: int = 0):
        gen = torch.Generator().manual_seed(seed)
        self.filters = []
        c_in = 3
        for c_out in (channels, channels * 2, channels * 2):
            w = torch.randn(c_out, c_in, 3, 3, generator=gen) / (3.0 * c_in**0.5)
            self.filters.append(w)
            c_in = c_out

    def __call__(self, frames: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        x = frames
        for w in self.filters:
            x = F.conv2d(x, w.to(x.dtype), stride=2, padding=1)
            x = F.relu(x)
            feats.append(x)
        return feats


PERCEPTUAL_EXTRACTORS: dict[str, Callable[[], object]] = {
    "identity": IdentityFeatures,
    "conv": ConvFeatures,
}


def make_extractor(name: str):
    if name not in PERCEPTUAL_EXTRACTORS:
        raise ValueError(f"unknown perceptual extractor {name!r}; "
                         f"registered: {sorted(PERCEPTUAL_EXTRACTORS)}")
    return PERCEPTUAL_EXTRACTORS[name]()
