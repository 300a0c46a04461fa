"""Two-stage optimization: shape first (extractor, silhouette generators,
discriminator, learned affine), texture second (refiners on top of the
frozen geometry). Deterministic under a seed and resumable bit-exactly.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig, config_hash, config_to_dict, run_config_from_dict
from .data import Batch, VideoPairDataset, load_pair, sample_batch
from .errors import CheckpointInvalid, ConfigMismatch, DivergenceDetected
from .keypoints import apply_affine, sample_random_affine, sample_random_affines
from .losses import (combine_stage1, combine_stage2, loss_discriminator,
                     loss_domain_confusion, loss_equivariance, loss_l1,
                     loss_lpips, loss_seg, loss_separation, loss_silhouette,
                     loss_temporal, make_extractor)
from .models import JokrModels, build_models, load_checkpoint, save_checkpoint

STATE_FILE = "train_state.pt"


class _Extraction:
    """Keypoints and heatmaps of one batch, extracted in a single pass
    over base and successor frames of both domains."""

    def __init__(self, models: JokrModels, batch: Batch):
        na, n = batch.n_a, batch.frames.shape[0]
        heat, kp = models.extract(torch.cat([batch.frames, batch.next_frames]))
        self.heat_a, self.heat_b = heat[:na], heat[na:n]
        self.kp_a, self.kp_b = kp[:na], kp[na:n]
        self.kp_a_next = kp[n:n + na]
        self.kp_b_next = kp[n + na:]


def stage1_terms(models: JokrModels, batch: Batch, *, delta: float,
                 eq_matrix: torch.Tensor, aug_a: torch.Tensor | None = None,
                 aug_b: torch.Tensor | None = None,
                 symmetric_confusion: bool = False,
                 extraction: _Extraction | None = None) -> dict[str, torch.Tensor]:
    """All six shape-stage terms for one batch.

    ``aug_a``/``aug_b`` are optional per-element [n, 2, 3] keypoint
    augmentations applied only on the discriminator input path; the
    keypoints fed to the generators and to the temporal / separation /
    silhouette terms stay unaugmented. The discriminator itself should be
    frozen by the caller: this objective trains the extractor, the
    generators and the learned affine.
    """
    ex = extraction or _Extraction(models, batch)

    pred_a = models.generate_silhouette(models.project(ex.kp_a), "A")
    pred_b = models.generate_silhouette(models.project(ex.kp_b), "B")
    seg = loss_seg(torch.cat([pred_a, pred_b]), batch.masks)

    kp_b_aligned = models.affine(ex.kp_b)
    dc_in_a = apply_affine(ex.kp_a, aug_a) if aug_a is not None else ex.kp_a
    dc_in_b = apply_affine(kp_b_aligned, aug_b) if aug_b is not None else kp_b_aligned
    dc = loss_domain_confusion(models.discriminator, dc_in_a, dc_in_b,
                               symmetric=symmetric_confusion)

    tmp = loss_temporal(torch.cat([ex.kp_a, ex.kp_b]),
                        torch.cat([ex.kp_a_next, ex.kp_b_next]))
    eq = loss_equivariance(models.extractor, batch.frames, eq_matrix)
    sep = loss_separation(torch.cat([ex.kp_a, ex.kp_b]), delta)
    sill = loss_silhouette(torch.cat([ex.heat_a, ex.heat_b]), batch.masks)
    return {"seg": seg, "dc": dc, "tmp": tmp, "eq": eq, "sep": sep, "sill": sill}


def total_stage1(batch: Batch, models: JokrModels, weights, *, rng=0,
                 augment=None, symmetric_confusion: bool = False):
    """Weighted shape-stage objective for a batch: (scalar, breakdown)."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    aug_a = aug_b = None
    if augment is not None:
        aug_a = sample_random_affines(augment, batch.n_a, rng)
        aug_b = sample_random_affines(augment, batch.frames.shape[0] - batch.n_a, rng)
        eq_matrix = sample_random_affine(augment, rng)
    else:
        from .keypoints import identity_affine
        eq_matrix = identity_affine()
    terms = stage1_terms(models, batch, delta=weights.delta, eq_matrix=eq_matrix,
                         aug_a=aug_a, aug_b=aug_b,
                         symmetric_confusion=symmetric_confusion)
    return combine_stage1(terms, weights)


def stage2_terms(models: JokrModels, batch: Batch, perceptual) -> dict[str, torch.Tensor]:
    """Texture-stage terms: reconstruct each frame from its own generated
    silhouette with the frozen shape networks."""
    with torch.no_grad():
        _, kp_a = models.extract(batch.frames_a)
        _, kp_b = models.extract(batch.frames_b)
        sil_a = models.generate_silhouette(models.project(kp_a), "A")
        sil_b = models.generate_silhouette(models.project(kp_b), "B")
    pred_a = models.refine(sil_a, "A")
    pred_b = models.refine(sil_b, "B")
    pred = torch.cat([pred_a, pred_b])
    return {"l1": loss_l1(pred, batch.frames),
            "lpips": loss_lpips(pred, batch.frames, perceptual)}


def total_stage2(batch: Batch, models: JokrModels, weights, perceptual=None):
    perceptual = perceptual or make_extractor("conv")
    return combine_stage2(stage2_terms(models, batch, perceptual), weights)


def _set_requires_grad(module: torch.nn.Module, flag: bool):
    for p in module.parameters():
        p.requires_grad_(flag)


class Trainer:
    """Owns the models, optimizers, RNG streams and checkpointing.

    All randomness (batch indices, keypoint augmentations, equivariance
    transforms) is drawn from one seeded numpy generator in a fixed order,
    so equal configs give bit-equal loss trajectories and a resumed run
    continues exactly where the interrupted one left off.
    """

    def __init__(self, dataset: VideoPairDataset, config: RunConfig,
                 models: JokrModels | None = None):
        if config.data.resolution != dataset.resolution[0]:
            raise ConfigMismatch(
                f"dataset at {dataset.resolution[0]}px, config says {config.data.resolution}px")
        if config.train.batch_size < 2:
            raise ConfigMismatch("training needs batch_size >= 2 (one element per domain)")
        torch.set_flush_denormal(True)  # denormals crawl on CPU
        self.dataset = dataset
        self.config = config
        self.models = models or build_models(config.model, config.data.resolution,
                                             seed=config.train.seed)
        self.rng = np.random.default_rng(config.train.seed)
        lr = config.train.lr
        self.opt_shape = torch.optim.Adam([
            {"params": list(self.models.extractor.parameters())
                       + list(self.models.generator.parameters())},
            {"params": list(self.models.affine.parameters()),
             "lr": lr * config.train.affine_lr_scale},
        ], lr=lr)
        self.opt_disc = torch.optim.Adam(self.models.discriminator.parameters(),
                                         lr=lr * config.train.disc_lr_scale)
        self.opt_refine = torch.optim.Adam(self.models.refiner.parameters(), lr=lr)
        self.perceptual = make_extractor(config.train.perceptual)
        self.iteration = 0
        self.stage = 1
        self.history: list[dict] = []
        self.out_dir = Path(config.train.out_dir)

    # -- one optimization step per network group ---------------------------

    def step_discriminator(self, batch: Batch, aug_a=None, aug_b=None,
                           keypoints: tuple | None = None) -> float:
        """Discriminator update on detached, augmented keypoints."""
        if keypoints is None:
            with torch.no_grad():
                _, kp_a = self.models.extract(batch.frames_a)
                _, kp_b = self.models.extract(batch.frames_b)
        else:
            kp_a, kp_b = (kp.detach() for kp in keypoints)
        with torch.no_grad():
            kp_b = self.models.affine(kp_b)
            if aug_a is not None:
                kp_a = apply_affine(kp_a, aug_a)
            if aug_b is not None:
                kp_b = apply_affine(kp_b, aug_b)
        loss = loss_discriminator(self.models.discriminator, kp_a, kp_b)
        self.opt_disc.zero_grad()
        loss.backward()
        self.opt_disc.step()
        return float(loss.detach())

    def step_shape(self, batch: Batch, eq_matrix, aug_a=None, aug_b=None,
                   extraction: _Extraction | None = None):
        """Extractor + generators + learned affine update; the
        discriminator is frozen for the duration so the confusion term
        cannot touch it."""
        _set_requires_grad(self.models.discriminator, False)
        try:
            terms = stage1_terms(
                self.models, batch, delta=self.config.train.weights.delta,
                eq_matrix=eq_matrix, aug_a=aug_a, aug_b=aug_b,
                symmetric_confusion=self.config.model.symmetric_confusion,
                extraction=extraction)
            total, breakdown = combine_stage1(terms, self.config.train.weights)
            self.opt_shape.zero_grad()
            total.backward()
            self.opt_shape.step()
        finally:
            _set_requires_grad(self.models.discriminator, True)
        return float(total.detach()), breakdown

    def step_refiners(self, batch: Batch):
        terms = stage2_terms(self.models, batch, self.perceptual)
        total, breakdown = combine_stage2(terms, self.config.train.weights)
        self.opt_refine.zero_grad()
        total.backward()
        self.opt_refine.step()
        return float(total.detach()), breakdown

    # -- stages -------------------------------------------------------------

    def train_stage1(self, iterations: int | None = None) -> Path:
        """Shape stage: alternate one discriminator step and one step of
        the extractor/generator/affine group per iteration."""
        if self.stage != 1:
            raise ConfigMismatch("trainer already past stage 1")
        iterations = self.config.train.iterations_stage1 if iterations is None else iterations
        augment = self.config.train.augment
        n = self.config.train.batch_size
        for _ in range(iterations):
            batch = sample_batch(self.dataset, n, self.rng)
            n_a, n_b = batch.n_a, n - batch.n_a
            aug_d_a = sample_random_affines(augment, n_a, self.rng)
            aug_d_b = sample_random_affines(augment, n_b, self.rng)
            aug_g_a = sample_random_affines(augment, n_a, self.rng)
            aug_g_b = sample_random_affines(augment, n_b, self.rng)
            eq_matrix = sample_random_affine(augment, self.rng)

            # one extraction pass feeds both steps: the discriminator sees
            # the detached keypoints, the shape step keeps the graph
            extraction = _Extraction(self.models, batch)
            d_loss = self.step_discriminator(batch, aug_d_a, aug_d_b,
                                             keypoints=(extraction.kp_a, extraction.kp_b))
            total, breakdown = self.step_shape(batch, eq_matrix, aug_g_a, aug_g_b,
                                               extraction=extraction)
            breakdown["disc"] = d_loss
            self._after_step(total, breakdown, stage=1)
        return self.save()

    def train_stage2(self, iterations: int | None = None) -> Path:
        """Texture stage: refiners only; every other network is frozen."""
        iterations = self.config.train.iterations_stage2 if iterations is None else iterations
        self.stage = 2
        for module in (self.models.extractor, self.models.generator,
                       self.models.discriminator, self.models.affine):
            _set_requires_grad(module, False)
        try:
            for _ in range(iterations):
                batch = sample_batch(self.dataset, self.config.train.batch_size, self.rng)
                total, breakdown = self.step_refiners(batch)
                self._after_step(total, breakdown, stage=2)
        finally:
            for module in (self.models.extractor, self.models.generator,
                           self.models.discriminator, self.models.affine):
                _set_requires_grad(module, True)
        return self.save()

    def train_remaining(self) -> Path:
        """Finish whatever the configured schedule still owes (used when
        resuming): the rest of stage 1, then all or the rest of stage 2."""
        t = self.config.train
        if self.stage == 1:
            self.train_stage1(max(0, t.iterations_stage1 - self.iteration))
            return self.train_stage2()
        done_stage2 = self.iteration - t.iterations_stage1
        return self.train_stage2(max(0, t.iterations_stage2 - done_stage2))

    # -- bookkeeping ----------------------------------------------------------

    def _after_step(self, total: float, breakdown: dict, stage: int):
        self.iteration += 1
        limit = self.config.train.divergence_limit
        bad = not math.isfinite(total) or total > limit or any(
            not math.isfinite(v) or v > limit for v in breakdown.values())
        if bad:
            dump = self.save(self.out_dir / "diverged")
            raise DivergenceDetected(
                f"non-finite or exploding loss at iteration {self.iteration} "
                f"(total={total}); state dumped to {dump}")
        record = {"iter": self.iteration, "stage": stage, "total": total, **breakdown}
        self.history.append(record)
        if self.iteration % self.config.train.log_interval == 0:
            self._write_log(record)
        if (self.config.train.checkpoint_interval
                and self.iteration % self.config.train.checkpoint_interval == 0):
            self.save()

    def _write_log(self, record: dict):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        with open(self.out_dir / "losses.ndjson", "a") as fh:
            for term, value in record.items():
                if term in ("iter", "stage"):
                    continue
                fh.write(json.dumps({"iter": record["iter"], "term": term,
                                     "value": value}) + "\n")

    def manifest(self) -> dict:
        cfg = self.config
        return {
            "K": cfg.model.num_keypoints,
            "resolution": cfg.data.resolution,
            "sigma": cfg.model.sigma,
            "alpha": cfg.model.alpha,
            "iteration": self.iteration,
            "stage": self.stage,
            "config_hash": config_hash(cfg),
            "path_a": cfg.path_a,
            "path_b": cfg.path_b,
            "model": config_to_dict(cfg.model),
            "data": config_to_dict(cfg.data),
            "train": config_to_dict(cfg.train),
        }

    def save(self, path: str | Path | None = None) -> Path:
        path = Path(path) if path else self.out_dir / "checkpoint"
        state = {
            "iteration": self.iteration,
            "stage": self.stage,
            "opt_shape": self.opt_shape.state_dict(),
            "opt_disc": self.opt_disc.state_dict(),
            "opt_refine": self.opt_refine.state_dict(),
            "numpy_rng": self.rng.bit_generator.state,
            "torch_rng": torch.get_rng_state(),
        }
        return save_checkpoint(path, self.models, self.manifest(),
                               extra_files={STATE_FILE: state})

    @classmethod
    def resume(cls, checkpoint: str | Path, dataset: VideoPairDataset | None = None,
               config: RunConfig | None = None) -> "Trainer":
        """Rebuild a trainer that continues exactly where a checkpoint
        stopped: weights, optimizer moments and RNG streams restored."""
        checkpoint = Path(checkpoint)
        models, manifest = load_checkpoint(checkpoint)
        stored = run_config_from_dict({
            "path_a": manifest["path_a"], "path_b": manifest["path_b"],
            "data": manifest["data"], "model": manifest["model"],
            "train": manifest["train"],
        })
        if config is not None:
            if config.model.num_keypoints != stored.model.num_keypoints:
                raise ConfigMismatch(
                    f"checkpoint has K={stored.model.num_keypoints}, "
                    f"config requests K={config.model.num_keypoints}")
            if config.data.resolution != stored.data.resolution:
                raise ConfigMismatch(
                    f"checkpoint at {stored.data.resolution}px, "
                    f"config requests {config.data.resolution}px")
            stored = config
        if dataset is None:
            dataset = dataset_for_manifest(manifest)
        trainer = cls(dataset, stored, models=models)
        state_path = checkpoint / STATE_FILE
        if not state_path.exists():
            raise CheckpointInvalid(f"checkpoint {checkpoint} has no {STATE_FILE}")
        state = torch.load(state_path, weights_only=False)
        trainer.iteration = state["iteration"]
        trainer.stage = state["stage"]
        trainer.opt_shape.load_state_dict(state["opt_shape"])
        trainer.opt_disc.load_state_dict(state["opt_disc"])
        trainer.opt_refine.load_state_dict(state["opt_refine"])
        trainer.rng.bit_generator.state = state["numpy_rng"]
        torch.set_rng_state(state["torch_rng"])
        return trainer


def resume(checkpoint: str | Path, dataset: VideoPairDataset | None = None):
    """Spec-shaped convenience: (models, trainer) for a checkpoint."""
    trainer = Trainer.resume(checkpoint, dataset=dataset)
    return trainer.models, trainer


def dataset_for_manifest(manifest: dict) -> VideoPairDataset:
    """Reload the dataset a checkpoint was trained on, from its manifest."""
    path_a, path_b = manifest.get("path_a", ""), manifest.get("path_b", "")
    if str(path_a).startswith("synthetic:"):
        from .synthetic import ellipse_pair
        return ellipse_pair(resolution=int(manifest["resolution"]))
    if not path_a or not path_b:
        raise CheckpointInvalid("checkpoint manifest carries no dataset paths")
    from .config import IngestConfig, _build
    return load_pair(path_a, path_b, _build(IngestConfig, manifest["data"]))
