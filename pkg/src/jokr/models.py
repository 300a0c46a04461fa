"""Networks: keypoint extractor, silhouette generator pair, texture
refiners, keypoint discriminator and the learned affine transform,
plus checkpoint save/load.
"""

from __future__ import annotations

import json
import os
import shutil
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn

from .config import ModelConfig
from .errors import CheckpointInvalid, ConfigMismatch, ShapeMismatch
from .keypoints import apply_affine, expect_keypoints, project_keypoints, spatial_softmax


def _conv_in_relu(c_in, c_out, kernel=3, stride=1):
    pad = kernel // 2
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, kernel, stride=stride, padding=pad),
        nn.InstanceNorm2d(c_out, affine=True),
        nn.ReLU(inplace=True),
    )


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.InstanceNorm2d(channels, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.InstanceNorm2d(channels, affine=True),
        )

    def forward(self, x):
        return x + self.body(x)


class KeypointExtractor(nn.Module):
    """Encoder-decoder that turns an image into K normalized heatmaps and
    their expected keypoints.

    The decoder stops at 1/heatmap_scale of the input resolution; a skip
    connection from the matching encoder level is concatenated before the
    K-channel head. The softmax runs over all spatial positions of each
    channel, so every heatmap is a proper distribution.
    """

    def __init__(self, num_keypoints: int, resolution: int, channels: int = 32,
                 heatmap_scale: int = 4):
        super().__init__()
        if heatmap_scale < 2 or heatmap_scale & (heatmap_scale - 1):
            raise ValueError("heatmap_scale must be a power of two >= 2")
        if resolution % (heatmap_scale * 2):
            raise ValueError("resolution must be divisible by 2 * heatmap_scale")
        self.num_keypoints = num_keypoints
        self.resolution = resolution
        self.heatmap_scale = heatmap_scale

        c = channels
        self.stem = _conv_in_relu(3, c)
        downs = []
        widths = [c]
        scale = 1
        while scale < heatmap_scale * 2:  # one level below the heatmap grid
            c_next = min(widths[-1] * 2, 8 * channels)
            downs.append(_conv_in_relu(widths[-1], c_next, stride=2))
            widths.append(c_next)
            scale *= 2
        self.downs = nn.ModuleList(downs)
        self.up = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False),
            _conv_in_relu(widths[-1], widths[-2]),
        )
        self.fuse = _conv_in_relu(widths[-2] * 2, widths[-2])
        self.head = nn.Conv2d(widths[-2], num_keypoints, 3, padding=1)

    def forward(self, frames: torch.Tensor):
        """[B, 3, H, W] -> (heatmaps [B, K, H/s, W/s], keypoints [B, K, 2])."""
        if frames.ndim != 4 or frames.shape[1] != 3:
            raise ShapeMismatch(f"expected [B,3,H,W] frames, got {tuple(frames.shape)}")
        if frames.shape[-1] != self.resolution or frames.shape[-2] != self.resolution:
            raise ShapeMismatch(
                f"extractor built for {self.resolution}px, got {tuple(frames.shape[-2:])}")
        x = self.stem(frames)
        skips = [x]
        for down in self.downs:
            x = down(x)
            skips.append(x)
        x = self.up(x)
        x = self.fuse(torch.cat([x, skips[-2]], dim=1))
        logits = self.head(x)
        heatmaps = spatial_softmax(logits)
        return heatmaps, expect_keypoints(heatmaps)


class GeneratorTrunk(nn.Module):
    """Shared trunk of the silhouette generators: confidence maps in,
    image-resolution features out, with a long skip from the stem."""

    def __init__(self, in_channels: int, channels: int = 32, blocks: int = 9):
        super().__init__()
        c = channels
        self.stem = _conv_in_relu(in_channels, c, kernel=7)
        self.down1 = _conv_in_relu(c, 2 * c, stride=2)
        self.down2 = _conv_in_relu(2 * c, 4 * c, stride=2)
        self.blocks = nn.Sequential(*[ResidualBlock(4 * c) for _ in range(blocks)])
        self.up1 = nn.Sequential(
            nn.ConvTranspose2d(4 * c, 2 * c, 4, stride=2, padding=1),
            nn.InstanceNorm2d(2 * c, affine=True),
            nn.ReLU(inplace=True),
        )
        self.up2 = nn.Sequential(
            nn.ConvTranspose2d(2 * c, c, 4, stride=2, padding=1),
            nn.InstanceNorm2d(c, affine=True),
            nn.ReLU(inplace=True),
        )

    def forward(self, maps: torch.Tensor) -> torch.Tensor:
        base = self.stem(maps)
        x = self.down1(base)
        x = self.down2(x)
        x = self.blocks(x)
        x = self.up1(x)
        x = self.up2(x)
        return x + base  # long skip


class SilhouetteGeneratorPair(nn.Module):
    """Two silhouette decoders that share every weight except the final
    per-domain convolution. The trunk is one module instance, not a copy,
    so a step on either head's path updates both domains' shared weights.
    """

    def __init__(self, num_keypoints: int, channels: int = 32, blocks: int = 9):
        super().__init__()
        self.trunk = GeneratorTrunk(num_keypoints, channels, blocks)
        self.heads = nn.ModuleDict({
            "A": nn.Conv2d(channels, 1, 7, padding=3),
            "B": nn.Conv2d(channels, 1, 7, padding=3),
        })

    def forward(self, maps: torch.Tensor, domain: str) -> torch.Tensor:
        if domain not in self.heads:
            raise ValueError(f"domain must be 'A' or 'B', got {domain!r}")
        if maps.ndim != 4:
            raise ShapeMismatch(f"expected [B,K,H,W] maps, got {tuple(maps.shape)}")
        features = self.trunk(maps)
        return torch.sigmoid(self.heads[domain](features))


class TranslationNet(nn.Module):
    """Residual image-to-image network used by the texture refiners."""

    def __init__(self, in_channels: int, out_channels: int, channels: int = 32,
                 blocks: int = 9):
        super().__init__()
        c = channels
        self.stem = _conv_in_relu(in_channels, c, kernel=7)
        self.down1 = _conv_in_relu(c, 2 * c, stride=2)
        self.down2 = _conv_in_relu(2 * c, 4 * c, stride=2)
        self.blocks = nn.Sequential(*[ResidualBlock(4 * c) for _ in range(blocks)])
        self.up1 = nn.Sequential(
            nn.ConvTranspose2d(4 * c, 2 * c, 4, stride=2, padding=1),
            nn.InstanceNorm2d(2 * c, affine=True),
            nn.ReLU(inplace=True),
        )
        self.up2 = nn.Sequential(
            nn.ConvTranspose2d(2 * c, c, 4, stride=2, padding=1),
            nn.InstanceNorm2d(c, affine=True),
            nn.ReLU(inplace=True),
        )
        self.head = nn.Conv2d(c, out_channels, 7, padding=3)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        base = self.stem(x)
        y = self.down1(base)
        y = self.down2(y)
        y = self.blocks(y)
        y = self.up1(y)
        y = self.up2(y) + base
        return torch.sigmoid(self.head(y))


class RefinerPair(nn.Module):
    """Per-domain silhouette -> RGB texture networks (no weight sharing)."""

    def __init__(self, channels: int = 32, blocks: int = 9):
        super().__init__()
        self.nets = nn.ModuleDict({
            "A": TranslationNet(1, 3, channels, blocks),
            "B": TranslationNet(1, 3, channels, blocks),
        })

    def forward(self, silhouette: torch.Tensor, domain: str) -> torch.Tensor:
        if domain not in self.nets:
            raise ValueError(f"domain must be 'A' or 'B', got {domain!r}")
        if silhouette.ndim != 4 or silhouette.shape[1] != 1:
            raise ShapeMismatch(f"expected [B,1,H,W] silhouette, got {tuple(silhouette.shape)}")
        return self.nets[domain](silhouette)


class KeypointDiscriminator(nn.Module):
    """Fully connected classifier on the flattened 2K coordinate vector:
    three linear layers with leaky rectifiers between them and a final
    sigmoid, so the output is a probability in (0, 1)."""

    def __init__(self, num_keypoints: int, hidden: int = 128):
        super().__init__()
        self.num_keypoints = num_keypoints
        self.net = nn.Sequential(
            nn.Linear(2 * num_keypoints, hidden),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(hidden, hidden),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(hidden, 1),
            nn.Sigmoid(),
        )

    def forward(self, keypoints: torch.Tensor) -> torch.Tensor:
        if keypoints.ndim != 3 or keypoints.shape[1] != self.num_keypoints:
            raise ShapeMismatch(
                f"expected [B,{self.num_keypoints},2] keypoints, got {tuple(keypoints.shape)}")
        return self.net(keypoints.reshape(keypoints.shape[0], -1))


class LearnedAffine(nn.Module):
    """Trainable 2x3 transform, identity at initialization, optimized
    together with the extractor to line the second domain's keypoints up
    with the first's before the discriminator sees them."""

    def __init__(self):
        super().__init__()
        self.weight = nn.Parameter(torch.tensor([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    @property
    def matrix(self) -> torch.Tensor:
        return self.weight.detach().clone()

    def forward(self, keypoints: torch.Tensor) -> torch.Tensor:
        return apply_affine(keypoints, self.weight)


@dataclass
class JokrModels:
    """All trainable pieces plus the knobs needed to run them."""

    extractor: KeypointExtractor
    generator: SilhouetteGeneratorPair
    refiner: RefinerPair
    discriminator: KeypointDiscriminator
    affine: LearnedAffine
    config: ModelConfig
    resolution: int

    def extract(self, frames: torch.Tensor):
        return self.extractor(frames)

    def project(self, keypoints: torch.Tensor) -> torch.Tensor:
        """Confidence maps at the generator's input (image) resolution."""
        return project_keypoints(
            keypoints, (self.resolution, self.resolution),
            alpha=self.config.alpha, sigma=self.config.sigma,
            power=self.config.gauss_power)

    def generate_silhouette(self, maps: torch.Tensor, domain: str) -> torch.Tensor:
        return self.generator(maps, domain)

    def refine(self, silhouette: torch.Tensor, domain: str) -> torch.Tensor:
        return self.refiner(silhouette, domain)

    def discriminate(self, keypoints: torch.Tensor) -> torch.Tensor:
        return self.discriminator(keypoints)

    def modules_by_name(self) -> dict[str, nn.Module]:
        return {
            "extractor": self.extractor,
            "generator_trunk": self.generator.trunk,
            "generator_heads": self.generator.heads,
            "refiner_a": self.refiner.nets["A"],
            "refiner_b": self.refiner.nets["B"],
            "discriminator": self.discriminator,
            "affine": self.affine,
        }

    def shape_parameters(self):
        """Stage-1 generator-side parameters: extractor + generators + affine."""
        return (list(self.extractor.parameters())
                + list(self.generator.parameters())
                + list(self.affine.parameters()))

    def eval_(self):
        for module in self.modules_by_name().values():
            module.eval()
        return self


def build_models(config: ModelConfig, resolution: int, seed: int = 0) -> JokrModels:
    """Construct all networks with seed-determined initial weights."""
    torch.manual_seed(seed)
    extractor = KeypointExtractor(config.num_keypoints, resolution,
                                  config.extractor_channels, config.heatmap_scale)
    generator = SilhouetteGeneratorPair(config.num_keypoints,
                                        config.generator_channels,
                                        config.generator_blocks)
    refiner = RefinerPair(config.refiner_channels, config.refiner_blocks)
    discriminator = KeypointDiscriminator(config.num_keypoints,
                                          config.discriminator_hidden)
    affine = LearnedAffine()
    return JokrModels(extractor, generator, refiner, discriminator, affine,
                      config, resolution)


# ---------------------------------------------------------------------------
# Checkpoints: a directory of one weights blob per network plus a JSON
# manifest carrying K, resolution, map constants, iteration count and the
# config hash (and the full run config, for resuming and inference).

MANIFEST_NAME = "manifest.json"
WEIGHT_FILES = {
    "extractor": "extractor.pt",
    "generator_trunk": "generator_trunk.pt",
    "generator_heads": "generator_heads.pt",
    "refiner_a": "refiner_a.pt",
    "refiner_b": "refiner_b.pt",
    "discriminator": "discriminator.pt",
    "affine": "affine.pt",
}


def save_checkpoint(path: str | Path, models: JokrModels, manifest: dict,
                    extra_files: dict[str, object] | None = None) -> Path:
    """Write a checkpoint directory atomically (build aside, then swap)."""
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp-{os.getpid()}")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    by_name = models.modules_by_name()
    for name, filename in WEIGHT_FILES.items():
        torch.save(by_name[name].state_dict(), tmp / filename)
    for filename, payload in (extra_files or {}).items():
        torch.save(payload, tmp / filename)
    (tmp / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    if path.exists():
        old = path.with_name(path.name + ".old")
        if old.exists():
            shutil.rmtree(old)
        os.rename(path, old)
        os.rename(tmp, path)
        shutil.rmtree(old)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        os.rename(tmp, path)
    return path


def read_manifest(path: str | Path) -> dict:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise CheckpointInvalid(f"no {MANIFEST_NAME} in {path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointInvalid(f"corrupt manifest in {path}: {exc}") from exc
    for key in ("K", "resolution", "model"):
        if key not in manifest:
            raise CheckpointInvalid(f"manifest in {path} is missing {key!r}")
    return manifest


def load_checkpoint(path: str | Path) -> tuple[JokrModels, dict]:
    """Rebuild the networks of a checkpoint directory and load weights."""
    path = Path(path)
    manifest = read_manifest(path)
    from .config import _build  # avoid a circular import at module load

    model_cfg = _build(ModelConfig, manifest["model"])
    models = build_models(model_cfg, int(manifest["resolution"]))
    by_name = models.modules_by_name()
    for name, filename in WEIGHT_FILES.items():
        blob = path / filename
        if not blob.exists():
            raise CheckpointInvalid(f"checkpoint {path} is missing {filename}")
        by_name[name].load_state_dict(torch.load(blob, weights_only=True))
    return models, manifest


def ensure_compatible(manifest: dict, num_keypoints: int, resolution: int):
    if int(manifest["K"]) != num_keypoints:
        raise ConfigMismatch(
            f"checkpoint has K={manifest['K']}, requested K={num_keypoints}")
    if int(manifest["resolution"]) != resolution:
        raise ConfigMismatch(
            f"checkpoint trained at {manifest['resolution']}px, requested {resolution}px")
