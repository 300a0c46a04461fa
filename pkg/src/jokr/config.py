"""Configuration dataclasses and the on-disk config file format.

A run is described by a YAML (or JSON) file with three sections mirroring
the dataclasses below::

    data:
      path_a: clips/fox          # directory of frames or a multi-frame file
      path_b: clips/cat
      resolution: 128
      mask_provider: threshold   # ground_truth | threshold | external
      threshold: 0.5
    model:
      num_keypoints: 12
    train:
      iterations_stage1: 45000
      iterations_stage2: 45000
      lr: 1.0e-4
      batch_size: 8
      seed: 0
      out_dir: runs/fox_cat

Unset keys fall back to the defaults declared here.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class LossWeights:
    """Weights of the two training objectives.

    Stage 1 combines the silhouette, confusion and geometry terms; stage 2
    combines pixel and perceptual reconstruction. ``delta`` is the squared
    distance below which two keypoints are penalized for crowding.
    """

    lambda_seg: float = 50.0
    lambda_dc: float = 0.5
    lambda_tmp: float = 1.0
    lambda_eq: float = 1.0
    lambda_sep: float = 1.0
    lambda_sill: float = 0.5
    delta: float = 0.1
    lambda_lpips: float = 2.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be nonnegative")


@dataclass
class AugmentRanges:
    """Ranges of the random affine keypoint augmentation.

    Rotation in degrees (sampled in ±rotation_deg), isotropic scale in
    [scale_min, scale_max], translation per axis in ±translation.
    """

    rotation_deg: float = 15.0
    scale_min: float = 0.9
    scale_max: float = 1.1
    translation: float = 0.1

    def __post_init__(self):
        if self.scale_min <= 0:
            raise ValueError("scale_min must be positive")
        if self.scale_min > self.scale_max:
            raise ValueError("scale range is inverted")


@dataclass
class IngestConfig:
    """How video pairs are decoded, resized and masked."""

    resolution: int = 128
    mask_provider: str = "threshold"  # ground_truth | threshold | external
    threshold: float = 0.5
    # RGB in [0,1]; None -> modal border pixel color of each frame
    background_color: tuple[float, float, float] | None = None
    mask_dir_a: str | None = None
    mask_dir_b: str | None = None
    external_provider: str | None = None
    # multiply frames by their silhouettes so losses never see background
    apply_mask_to_frames: bool = True


@dataclass
class ModelConfig:
    """Architecture knobs shared by training and inference."""

    num_keypoints: int = 12
    sigma: float = 0.1
    alpha: float = 1.0
    # exponent on |p - k| inside the confidence map; 1 as printed, 2 for
    # the squared-distance variant used by related systems
    gauss_power: int = 1
    heatmap_scale: int = 4  # heatmap resolution = image resolution / scale
    extractor_channels: int = 32
    generator_channels: int = 32
    generator_blocks: int = 9
    refiner_channels: int = 32
    refiner_blocks: int = 9
    discriminator_hidden: int = 128
    # label A-keypoints 0.5/0.5 instead of 1 in the confusion term
    symmetric_confusion: bool = False

    def __post_init__(self):
        if self.num_keypoints < 1:
            raise ValueError("num_keypoints must be >= 1")
        if self.sigma <= 0 or self.alpha <= 0:
            raise ValueError("sigma and alpha must be positive")


@dataclass
class TrainConfig:
    iterations_stage1: int = 45000
    iterations_stage2: int = 45000
    lr: float = 1e-4
    # lr multiplier for the 6-parameter learned affine; on short schedules
    # it cannot traverse a real scale gap at the shared lr
    affine_lr_scale: float = 1.0
    # lr multiplier for the discriminator (slow it down to shift the
    # adversarial equilibrium toward confusion on short schedules)
    disc_lr_scale: float = 1.0
    batch_size: int = 8
    seed: int = 0
    checkpoint_interval: int = 1000
    log_interval: int = 50
    out_dir: str = "runs/default"
    weights: LossWeights = field(default_factory=LossWeights)
    augment: AugmentRanges = field(default_factory=AugmentRanges)
    # abort when any loss term exceeds this or turns non-finite
    divergence_limit: float = 1e4
    perceptual: str = "conv"  # conv | identity (stage-2 feature extractor)

    def __post_init__(self):
        if self.iterations_stage1 < 0 or self.iterations_stage2 < 0:
            raise ValueError("iteration counts must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class RunConfig:
    """Top-level config: data + model + train, as stored in a config file."""

    path_a: str = ""
    path_b: str = ""
    data: IngestConfig = field(default_factory=IngestConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


_NESTED = {"weights": LossWeights, "augment": AugmentRanges,
           "data": IngestConfig, "model": ModelConfig, "train": TrainConfig}


def _build(cls, raw: dict):
    kwargs = {}
    names = {f.name for f in dataclasses.fields(cls)}
    for key, value in raw.items():
        if key not in names:
            raise ValueError(f"unknown config key {key!r} for {cls.__name__}")
        if key in _NESTED and isinstance(value, dict):
            value = _build(_NESTED[key], value)
        elif key == "background_color" and value is not None:
            value = tuple(float(v) for v in value)
        kwargs[key] = value
    return cls(**kwargs)


def run_config_from_dict(raw: dict) -> RunConfig:
    raw = dict(raw)
    cfg = RunConfig(path_a=raw.pop("path_a", ""), path_b=raw.pop("path_b", ""))
    if "data" in raw:
        data = dict(raw.pop("data"))
        # tolerate path_a/path_b nested under data
        cfg.path_a = data.pop("path_a", cfg.path_a)
        cfg.path_b = data.pop("path_b", cfg.path_b)
        cfg.data = _build(IngestConfig, data)
    if "model" in raw:
        cfg.model = _build(ModelConfig, raw.pop("model"))
    if "train" in raw:
        cfg.train = _build(TrainConfig, raw.pop("train"))
    if raw:
        raise ValueError(f"unknown top-level config keys: {sorted(raw)}")
    return cfg


def load_run_config(path: str | Path) -> RunConfig:
    """Parse a YAML or JSON config file into a RunConfig."""
    import yaml

    text = Path(path).read_text()
    raw = yaml.safe_load(text) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"config file {path} must contain a mapping")
    return run_config_from_dict(raw)


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def config_hash(cfg: RunConfig) -> str:
    """Stable hash of a run configuration, recorded in checkpoints."""
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
