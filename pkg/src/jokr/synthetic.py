"""Synthetic ellipse video pairs: a two-domain motion dataset small
enough to train on a CPU, used by the scripted toy experiment and handy
for smoke-testing the full pipeline.

Domain A is a wide two-tone ellipse orbiting counter-clockwise; domain B
is a rounder, differently colored ellipse on a phase-shifted orbit run
in the opposite direction. The two domains differ by an anisotropic
scale, the affine-disproportion regime the learned aligner is built for.
Ground-truth silhouettes are exact rasterizations.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .config import IngestConfig, ModelConfig, RunConfig, TrainConfig
from .data import VideoPairDataset


def _grid(resolution: int):
    coords = (2 * np.arange(resolution) + 1) / resolution - 1
    v, u = np.meshgrid(coords, coords, indexing="ij")
    return u.astype(np.float32), v.astype(np.float32)


def ellipse_mask(resolution: int, center, semi_axes) -> np.ndarray:
    """Binary rasterization of an axis-aligned ellipse in normalized
    coordinates (pixel centers at (2i+1)/N - 1)."""
    u, v = _grid(resolution)
    cu, cv = center
    au, av = semi_axes
    inside = ((u - cu) / au) ** 2 + ((v - cv) / av) ** 2 <= 1.0
    return inside.astype(np.float32)


def _render(resolution, center, semi_axes, top_color, bottom_color):
    mask = ellipse_mask(resolution, center, semi_axes)
    _, v = _grid(resolution)
    frame = np.zeros((resolution, resolution, 3), dtype=np.float32)
    top = (v < center[1])[..., None]
    frame += mask[..., None] * np.where(top, np.asarray(top_color, dtype=np.float32),
                                        np.asarray(bottom_color, dtype=np.float32))
    return frame, mask


# domain B's geometry is domain A's scaled by (0.78, 1.18): the shapes and
# path loci line up under one anisotropic scale, with phase and direction
# distinct (distribution-level alignment does not care about handedness)

def _path_a(t: np.ndarray):
    return 0.26 * np.cos(2 * np.pi * t), 0.17 * np.sin(2 * np.pi * t)


def _path_b(t: np.ndarray):
    phase = 2 * np.pi * t + 0.7
    return 0.26 * 0.78 * np.sin(phase), 0.17 * 1.18 * np.cos(phase)


def ellipse_pair(num_frames: int = 60, resolution: int = 64) -> VideoPairDataset:
    """Build the toy dataset directly as arrays (no disk round trip)."""
    t = np.arange(num_frames) / num_frames
    ua, va = _path_a(t)
    ub, vb = _path_b(t)
    frames_a, masks_a, frames_b, masks_b = [], [], [], []
    for i in range(num_frames):
        fa, ma = _render(resolution, (ua[i], va[i]), (0.45, 0.26),
                         (0.95, 0.55, 0.15), (0.60, 0.25, 0.05))
        fb, mb = _render(resolution, (ub[i], vb[i]), (0.45 * 0.78, 0.26 * 1.18),
                         (0.15, 0.70, 0.75), (0.05, 0.25, 0.60))
        frames_a.append(fa)
        masks_a.append(ma)
        frames_b.append(fb)
        masks_b.append(mb)
    return VideoPairDataset(
        frames_a=np.stack(frames_a), frames_b=np.stack(frames_b),
        masks_a=np.stack(masks_a), masks_b=np.stack(masks_b),
        resolution=(resolution, resolution),
        source_a="synthetic:ellipse_a", source_b="synthetic:ellipse_b",
    )


def write_video_dir(frames: np.ndarray, out_dir: str | Path, masks: np.ndarray | None = None):
    """Dump frames (and optionally masks) as zero-padded PNG sequences."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        img = Image.fromarray((np.clip(frame, 0, 1) * 255).astype(np.uint8))
        img.save(out / f"{i:05d}.png")
    if masks is not None:
        mask_dir = out.with_name(out.name + "_masks")
        mask_dir.mkdir(parents=True, exist_ok=True)
        for i, mask in enumerate(masks):
            Image.fromarray((np.clip(mask, 0, 1) * 255).astype(np.uint8)).save(
                mask_dir / f"{i:05d}.png")


def toy_config(out_dir: str = "runs/toy", seed: int = 0) -> RunConfig:
    """Desk-scale training preset for the ellipse pair: 6 keypoints,
    small networks, 2000 + 1000 iterations at 64 px."""
    return RunConfig(
        path_a="synthetic:ellipse_a",
        path_b="synthetic:ellipse_b",
        data=IngestConfig(resolution=64),
        model=ModelConfig(
            num_keypoints=6,
            extractor_channels=12,
            generator_channels=10,
            generator_blocks=2,
            refiner_channels=10,
            refiner_blocks=2,
            discriminator_hidden=64,
        ),
        train=TrainConfig(
            iterations_stage1=2000,
            iterations_stage2=1000,
            batch_size=8,
            seed=seed,
            checkpoint_interval=1000,
            log_interval=100,
            out_dir=out_dir,
        ),
    )
