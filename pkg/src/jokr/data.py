"""Loading video pairs: decoding, resizing, silhouette attachment and
batch sampling.

A "video" is either a directory of PNG/JPEG frames (ordered by their
zero-padded numeric filenames) or a single multi-frame file handled by a
registered decoder (animated GIFs out of the box). Silhouettes come from
one of three providers: parallel ground-truth mask files, a background
color threshold, or an external callable registered by name.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from PIL import Image

from .config import IngestConfig
from .errors import MaskMismatch, MissingInput, ProviderFailure, TooShort

FRAME_SUFFIXES = (".png", ".jpg", ".jpeg")

# name -> callable(frame [H,W,3] float in [0,1]) -> mask [H,W] floats
MASK_PROVIDERS: dict[str, Callable[[np.ndarray], np.ndarray]] = {}

# suffix -> callable(path) -> list of RGB uint8 arrays
VIDEO_DECODERS: dict[str, Callable[[Path], list[np.ndarray]]] = {}


def register_mask_provider(name: str, provider: Callable[[np.ndarray], np.ndarray]):
    MASK_PROVIDERS[name] = provider


def register_video_decoder(suffix: str, decoder: Callable[[Path], list[np.ndarray]]):
    VIDEO_DECODERS[suffix.lower()] = decoder


def _pillow_decoder(path: Path) -> list[np.ndarray]:
    frames = []
    with Image.open(path) as img:
        for idx in range(getattr(img, "n_frames", 1)):
            img.seek(idx)
            frames.append(np.asarray(img.convert("RGB")))
    return frames


for _suffix in (".gif", ".webp", ".tif", ".tiff", ".apng"):
    register_video_decoder(_suffix, _pillow_decoder)


@dataclass
class VideoPairDataset:
    """Frames and silhouettes of the two input videos.

    frames_*: [N, H, W, 3] float32 in [0, 1]; masks_*: [N, H, W] float32
    in [0, 1], parallel to the frames. Read-only after construction.
    """

    frames_a: np.ndarray
    frames_b: np.ndarray
    masks_a: np.ndarray
    masks_b: np.ndarray
    resolution: tuple[int, int]
    source_a: str = ""
    source_b: str = ""

    def __post_init__(self):
        for frames, masks, tag in ((self.frames_a, self.masks_a, "A"),
                                   (self.frames_b, self.masks_b, "B")):
            if len(frames) == 0:
                raise MissingInput(f"video {tag} has no frames")
            if len(frames) != len(masks):
                raise MaskMismatch(f"video {tag}: {len(frames)} frames vs {len(masks)} masks")
            if frames.shape[1:3] != masks.shape[1:3]:
                raise MaskMismatch(f"video {tag}: mask shape {masks.shape[1:3]} "
                                   f"!= frame shape {frames.shape[1:3]}")

    def frames(self, domain: str) -> np.ndarray:
        return self.frames_a if domain == "A" else self.frames_b

    def masks(self, domain: str) -> np.ndarray:
        return self.masks_a if domain == "A" else self.masks_b


@dataclass
class Batch:
    """One training batch of (frame, mask, successor-frame) elements.

    Elements alternate between the two videos, domain-A block first; the
    successor of element i is frame ``indices[i] + 1`` of the same video.
    Per-domain views are exposed as slices of the stacked tensors.
    """

    frames: torch.Tensor       # [n, 3, H, W]
    masks: torch.Tensor        # [n, 1, H, W]
    next_frames: torch.Tensor  # [n, 3, H, W]
    domains: np.ndarray        # [n] of "A"/"B", A block first
    indices: np.ndarray        # [n] base frame index within its video

    @property
    def n_a(self) -> int:
        return int((self.domains == "A").sum())

    @property
    def frames_a(self) -> torch.Tensor:
        return self.frames[:self.n_a]

    @property
    def frames_b(self) -> torch.Tensor:
        return self.frames[self.n_a:]

    @property
    def masks_a(self) -> torch.Tensor:
        return self.masks[:self.n_a]

    @property
    def masks_b(self) -> torch.Tensor:
        return self.masks[self.n_a:]

    @property
    def next_frames_a(self) -> torch.Tensor:
        return self.next_frames[:self.n_a]

    @property
    def next_frames_b(self) -> torch.Tensor:
        return self.next_frames[self.n_a:]


def frames_to_tensor(frames: np.ndarray) -> torch.Tensor:
    """[N, H, W, 3] float array -> [N, 3, H, W] float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(frames.transpose(0, 3, 1, 2))).float()


def masks_to_tensor(masks: np.ndarray) -> torch.Tensor:
    """[N, H, W] float array -> [N, 1, H, W] float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(masks[:, None])).float()


def _list_frame_files(directory: Path) -> list[Path]:
    files = sorted(p for p in directory.iterdir()
                   if p.suffix.lower() in FRAME_SUFFIXES)
    return files


def _decode(path: Path) -> list[np.ndarray]:
    if not path.exists():
        raise MissingInput(f"input path {path} does not exist")
    if path.is_dir():
        files = _list_frame_files(path)
        if not files:
            raise MissingInput(f"directory {path} holds no frame files")
        return [np.asarray(Image.open(f).convert("RGB")) for f in files]
    decoder = VIDEO_DECODERS.get(path.suffix.lower())
    if decoder is None:
        raise MissingInput(f"no decoder registered for {path.suffix!r} files")
    frames = decoder(path)
    if not frames:
        raise MissingInput(f"decoder produced no frames for {path}")
    return frames


def _resize_frames(frames: list[np.ndarray], resolution: int) -> np.ndarray:
    out = []
    for arr in frames:
        img = Image.fromarray(arr)
        if img.size != (resolution, resolution):
            img = img.resize((resolution, resolution), Image.BILINEAR)
        out.append(np.asarray(img, dtype=np.float32) / 255.0)
    return np.stack(out)


def modal_border_color(frame: np.ndarray) -> np.ndarray:
    """Most frequent color along the 1-pixel border, as float RGB."""
    border = np.concatenate([frame[0], frame[-1], frame[:, 0], frame[:, -1]])
    quantized = np.round(border * 255).astype(np.uint8)
    colors, counts = np.unique(quantized, axis=0, return_counts=True)
    return colors[np.argmax(counts)].astype(np.float32) / 255.0


def mask_from_threshold(frame: np.ndarray, threshold: float,
                        background_color=None) -> np.ndarray:
    """Binary silhouette: 0 where a pixel matches the background color.

    Uses the Euclidean RGB distance scaled to [0, 1]; the background
    color defaults to the modal border pixel color of the frame.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    bg = np.asarray(background_color if background_color is not None
                    else modal_border_color(frame), dtype=np.float32)
    dist = np.linalg.norm(frame - bg, axis=-1) / np.sqrt(3.0)
    return (dist > threshold).astype(np.float32)


def mask_from_external(frame: np.ndarray, provider, frame_index: int = -1) -> np.ndarray:
    """Run an external mask provider and enforce the mask contract."""
    try:
        mask = np.asarray(provider(frame), dtype=np.float32)
    except Exception as exc:
        raise ProviderFailure(f"mask provider failed on frame {frame_index}: {exc}",
                              frame_index=frame_index) from exc
    if mask.shape != frame.shape[:2]:
        raise MaskMismatch(f"provider returned shape {mask.shape} for frame "
                           f"{frame_index} of shape {frame.shape[:2]}")
    return np.clip(mask, 0.0, 1.0)


def _load_mask_dir(directory: str, count: int, resolution: int) -> np.ndarray:
    path = Path(directory)
    if not path.is_dir():
        raise MissingInput(f"mask directory {directory} does not exist")
    files = _list_frame_files(path)
    if len(files) != count:
        raise MaskMismatch(f"{len(files)} masks in {directory} for {count} frames")
    masks = []
    for f in files:
        img = Image.open(f).convert("L")
        if img.size != (resolution, resolution):
            img = img.resize((resolution, resolution), Image.BILINEAR)
        masks.append(np.asarray(img, dtype=np.float32) / 255.0)
    return np.clip(np.stack(masks), 0.0, 1.0)


def _attach_masks(frames: np.ndarray, config: IngestConfig, mask_dir: str | None,
                  tag: str) -> np.ndarray:
    if config.mask_provider == "ground_truth":
        if not mask_dir:
            raise MissingInput(f"ground_truth masks requested for video {tag} "
                               "but no mask directory configured")
        return _load_mask_dir(mask_dir, len(frames), frames.shape[1])
    if config.mask_provider == "threshold":
        return np.stack([mask_from_threshold(f, config.threshold, config.background_color)
                         for f in frames])
    if config.mask_provider == "external":
        provider = MASK_PROVIDERS.get(config.external_provider or "")
        if provider is None:
            raise MissingInput(f"external mask provider {config.external_provider!r} "
                               "is not registered")
        return np.stack([mask_from_external(f, provider, i)
                         for i, f in enumerate(frames)])
    raise ValueError(f"unknown mask provider {config.mask_provider!r}")


def load_pair(path_a: str | Path, path_b: str | Path,
              config: IngestConfig | None = None) -> VideoPairDataset:
    """Decode two videos into a dataset at the configured resolution.

    Frames are resized bilinearly and normalized to [0, 1]; silhouettes
    are attached per the configured provider, and (by default) multiplied
    into the frames so the background is black everywhere downstream.
    """
    config = config or IngestConfig()
    videos = {}
    for tag, path, mask_dir in (("A", Path(path_a), config.mask_dir_a),
                                ("B", Path(path_b), config.mask_dir_b)):
        raw = _decode(path)
        if len(raw) < 2:
            raise TooShort(f"video {tag} ({path}) has {len(raw)} frame(s); need >= 2")
        frames = _resize_frames(raw, config.resolution)
        masks = _attach_masks(frames, config, mask_dir, tag)
        if config.apply_mask_to_frames:
            frames = frames * masks[..., None]
        videos[tag] = (frames, masks)
    return VideoPairDataset(
        frames_a=videos["A"][0], frames_b=videos["B"][0],
        masks_a=videos["A"][1], masks_b=videos["B"][1],
        resolution=(config.resolution, config.resolution),
        source_a=str(path_a), source_b=str(path_b),
    )


def sample_batch(dataset: VideoPairDataset, batch_size: int, rng) -> Batch:
    """Draw batch_size (frame, mask, successor) elements, stratified
    evenly across the two videos (the extra element of an odd batch goes
    to video A).

    Base indices are uniform over [0, N-2] within each video, so the
    last frame is never a base element and every element's successor is
    the next frame of the same video. ``rng`` is an int seed or a numpy
    Generator; a fixed seed reproduces the batch exactly.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    n_a = (batch_size + 1) // 2
    frames, masks, nexts, domains, indices = [], [], [], [], []
    for tag, count in (("A", n_a), ("B", batch_size - n_a)):
        video_frames = dataset.frames(tag)
        video_masks = dataset.masks(tag)
        idx = rng.integers(0, len(video_frames) - 1, size=count)
        frames.append(video_frames[idx])
        masks.append(video_masks[idx])
        nexts.append(video_frames[idx + 1])
        domains.extend([tag] * count)
        indices.append(idx)
    return Batch(
        frames=frames_to_tensor(np.concatenate(frames)),
        masks=masks_to_tensor(np.concatenate(masks)),
        next_frames=frames_to_tensor(np.concatenate(nexts)),
        domains=np.array(domains),
        indices=np.concatenate(indices),
    )
