"""Representation math: heatmaps -> keypoints -> confidence maps, plus
affine actions on keypoints and images.

Conventions used everywhere in this package:

* Keypoints live in normalized coordinates [-1, 1] x [-1, 1] with the
  origin at the image center; ``u`` runs horizontally (width), ``v``
  vertically (height).
* The center of pixel (row i, col j) of an H x W image sits at
  ``u = (2j + 1) / W - 1``, ``v = (2i + 1) / H - 1``.
* Heatmaps are per-channel probability maps: every K-channel slice sums
  to one. Confidence maps are the rendered Gaussian bumps fed to the
  silhouette generators.

All functions are pure, differentiable torch ops unless noted.
"""

from __future__ import annotations

import numpy as np
import torch

from .errors import NotNormalized, SingularTransform

SUM_TOLERANCE = 1e-3  # max deviation of a heatmap channel sum from 1


def pixel_center_grid(height: int, width: int, dtype=torch.float32, device=None):
    """Normalized (u, v) coordinates of pixel centers, shape [H, W, 2]."""
    u = (2 * torch.arange(width, dtype=dtype, device=device) + 1) / width - 1
    v = (2 * torch.arange(height, dtype=dtype, device=device) + 1) / height - 1
    vv, uu = torch.meshgrid(v, u, indexing="ij")
    return torch.stack([uu, vv], dim=-1)


def spatial_softmax(logits: torch.Tensor) -> torch.Tensor:
    """Softmax over the spatial dimensions of [..., K, H, W] logits.

    Output channels are nonnegative and sum to one, satisfying the
    heatmap contract consumed by :func:`expect_keypoints`.
    """
    shape = logits.shape
    flat = logits.reshape(*shape[:-2], -1)
    return torch.softmax(flat, dim=-1).reshape(shape)


def _check_normalized(heatmaps: torch.Tensor):
    sums = heatmaps.detach().sum(dim=(-2, -1))
    err = (sums - 1).abs().max().item()
    if err > SUM_TOLERANCE:
        raise NotNormalized(f"heatmap channel sums deviate from 1 by {err:.2e}")


def expect_keypoints(heatmaps: torch.Tensor) -> torch.Tensor:
    """Coordinate expectation of heatmap channels.

    For each channel takes ``k = sum_{u,v} [u * H(u, v), v * H(u, v)]``
    with (u, v) the normalized pixel-center coordinates, so a delta
    distribution at a pixel maps to that pixel's center. Accepts
    [K, H, W] or [B, K, H, W]; returns [K, 2] or [B, K, 2].
    """
    if heatmaps.ndim not in (3, 4):
        raise ValueError("heatmaps must be [K,H,W] or [B,K,H,W]")
    _check_normalized(heatmaps)
    h, w = heatmaps.shape[-2:]
    grid = pixel_center_grid(h, w, dtype=heatmaps.dtype, device=heatmaps.device)
    ku = (heatmaps * grid[..., 0]).sum(dim=(-2, -1))
    kv = (heatmaps * grid[..., 1]).sum(dim=(-2, -1))
    return torch.stack([ku, kv], dim=-1)


def project_keypoints(
    keypoints: torch.Tensor,
    resolution: tuple[int, int],
    alpha: float = 1.0,
    sigma: float = 0.1,
    power: int = 1,
) -> torch.Tensor:
    """Render keypoints as spatial confidence maps.

    Each channel is ``(1/alpha) * exp(-|p - k|^power / sigma^2)`` with
    ``|.|`` the Euclidean norm in normalized coordinates. ``power=1``
    follows the formula as printed; ``power=2`` gives the squared-norm
    variant. Accepts [K, 2] or [B, K, 2]; returns [(B,) K, H, W].
    """
    if sigma <= 0 or alpha <= 0:
        raise ValueError("sigma and alpha must be positive")
    h, w = resolution
    grid = pixel_center_grid(h, w, dtype=keypoints.dtype, device=keypoints.device)
    k = keypoints[..., None, None, :]  # [(B,) K, 1, 1, 2]
    diff = grid - k
    sq = (diff * diff).sum(dim=-1)
    if power == 2:
        dist_pow = sq
    else:
        # sqrt has an infinite gradient at 0; mask out exact hits so the
        # coincident pixel contributes a (correct) zero gradient instead
        safe = torch.where(sq > 0, sq, torch.ones_like(sq))
        dist = torch.where(sq > 0, torch.sqrt(safe), torch.zeros_like(sq))
        dist_pow = dist if power == 1 else dist**power
    return (1.0 / alpha) * torch.exp(-dist_pow / (sigma * sigma))


def identity_affine(dtype=torch.float32, device=None) -> torch.Tensor:
    return torch.tensor([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], dtype=dtype, device=device)


def apply_affine(keypoints: torch.Tensor, matrix: torch.Tensor) -> torch.Tensor:
    """Map each (u, v) point by a 2x3 matrix: ``p' = L p + t``.

    ``matrix`` is [2, 3] or, for per-element transforms of a batched
    [B, K, 2] set, [B, 2, 3]. Point order is preserved.
    """
    matrix = torch.as_tensor(matrix, dtype=keypoints.dtype, device=keypoints.device)
    linear = matrix[..., :2]
    shift = matrix[..., 2]
    if matrix.ndim == 3:  # [B,2,3] acting on [B,K,2]
        return torch.einsum("bij,bkj->bki", linear, keypoints) + shift[:, None, :]
    return keypoints @ linear.T + shift


def invert_affine(matrix: torch.Tensor) -> torch.Tensor:
    """Inverse of a 2x3 affine transform; raises on singular linear part."""
    matrix = torch.as_tensor(matrix)
    linear = matrix[:, :2]
    det = torch.det(linear.double())
    if not torch.isfinite(det) or det.abs().item() < 1e-12:
        raise SingularTransform(f"affine linear part has determinant {det:.3e}")
    inv = torch.linalg.inv(linear)
    shift = -inv @ matrix[:, 2]
    return torch.cat([inv, shift[:, None]], dim=1)


def sample_random_affine(ranges, rng) -> torch.Tensor:
    """Draw one rotation/scale/translation transform, composed as
    ``[s * R(theta) | t]``. ``rng`` is an int seed or a numpy Generator;
    equal seeds give equal matrices.
    """
    return sample_random_affines(ranges, 1, rng)[0]


def sample_random_affines(ranges, count: int, rng) -> torch.Tensor:
    """Vectorized :func:`sample_random_affine`; returns [count, 2, 3]."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    theta = np.radians(rng.uniform(-ranges.rotation_deg, ranges.rotation_deg, size=count))
    scale = rng.uniform(ranges.scale_min, ranges.scale_max, size=count)
    shift = rng.uniform(-ranges.translation, ranges.translation, size=(count, 2))
    cos, sin = np.cos(theta) * scale, np.sin(theta) * scale
    mats = np.zeros((count, 2, 3))
    mats[:, 0, 0] = cos
    mats[:, 0, 1] = -sin
    mats[:, 1, 0] = sin
    mats[:, 1, 1] = cos
    mats[:, :, 2] = shift
    return torch.from_numpy(mats.astype(np.float32))


def warp_frame(frames: torch.Tensor, matrix: torch.Tensor) -> torch.Tensor:
    """Warp [B, C, H, W] images so content moves by the given affine map.

    Inverse-maps output pixel centers through ``matrix`` and samples the
    input bilinearly with zero fill outside the borders, so an extractor
    equivariant to the transform sees its keypoints move by exactly the
    same map. An exact identity matrix returns the input unchanged.
    """
    matrix = torch.as_tensor(matrix, dtype=frames.dtype, device=frames.device)
    if matrix.shape != (2, 3):
        raise ValueError("matrix must be 2x3")
    if torch.equal(matrix, identity_affine(dtype=frames.dtype, device=frames.device)):
        return frames
    b, _, h, w = frames.shape
    inverse = invert_affine(matrix).to(frames.dtype)
    grid = pixel_center_grid(h, w, dtype=frames.dtype, device=frames.device)
    src = grid.reshape(-1, 2) @ inverse[:, :2].T + inverse[:, 2]
    src = src.reshape(1, h, w, 2).expand(b, h, w, 2)
    return torch.nn.functional.grid_sample(
        frames, src, mode="bilinear", padding_mode="zeros", align_corners=False
    )


def keypoints_to_json(keypoints: torch.Tensor) -> dict:
    """Interchange form used by the CLI, HTTP service and editor UI."""
    if keypoints.ndim != 2 or keypoints.shape[-1] != 2:
        raise ValueError("expected a single [K, 2] keypoint set")
    return {
        "K": int(keypoints.shape[0]),
        "points": [[float(u), float(v)] for u, v in keypoints.tolist()],
        "convention": "center_normalized",
    }


def keypoints_from_json(payload: dict) -> torch.Tensor:
    if payload.get("convention") != "center_normalized":
        raise ValueError("unsupported keypoint convention")
    points = payload["points"]
    if len(points) != payload["K"]:
        raise ValueError("K does not match number of points")
    return torch.tensor(points, dtype=torch.float32)
