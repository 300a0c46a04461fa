"""Command line interface: train, retarget, sync, edit, eval, serve, and
a synthetic data generator for quick experiments."""

from __future__ import annotations

import json
from pathlib import Path

import click
import numpy as np
import torch
from PIL import Image

from .config import load_run_config
from .data import frames_to_tensor, load_pair
from .infer import RetargetRequest, edit_frame, retarget
from .keypoints import keypoints_to_json
from .metrics import reconstruction_report, temporal_displacement
from .models import load_checkpoint


def _dataset_for(config):
    if str(config.path_a).startswith("synthetic:"):
        from .synthetic import ellipse_pair
        return ellipse_pair(resolution=config.data.resolution)
    return load_pair(config.path_a, config.path_b, config.data)


def _save_frame(frame: torch.Tensor, path: Path):
    arr = (frame.clamp(0, 1).numpy().transpose(1, 2, 0) * 255).astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def _write_sequence(frames: torch.Tensor, keypoints: torch.Tensor | None,
                    out_dir: Path, save_keypoints: bool):
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        _save_frame(frame, out_dir / f"{i:05d}.png")
        if save_keypoints and keypoints is not None:
            (out_dir / f"{i:05d}.json").write_text(
                json.dumps(keypoints_to_json(keypoints[i])))


@click.group()
def main():
    """Cross-domain motion retargeting through a joint keypoint bottleneck."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--resume", "resume_path", type=click.Path(exists=True), default=None)
@click.option("--stage", type=click.Choice(["1", "2", "all"]), default="all")
def train(config_path, resume_path, stage):
    """Run the two-stage optimization described by a config file."""
    from .train import Trainer

    config = load_run_config(config_path)
    if resume_path:
        trainer = Trainer.resume(resume_path, config=config)
    else:
        trainer = Trainer(_dataset_for(config), config)
    schedule = config.train
    if stage in ("1", "all") and trainer.stage == 1:
        remaining = max(0, schedule.iterations_stage1 - trainer.iteration)
        trainer.train_stage1(remaining)
        click.echo(f"stage 1 done at iteration {trainer.iteration}")
    if stage in ("2", "all"):
        done = max(0, trainer.iteration - schedule.iterations_stage1)
        trainer.train_stage2(max(0, schedule.iterations_stage2 - done)
                             if trainer.stage == 2 else schedule.iterations_stage2)
        click.echo(f"stage 2 done at iteration {trainer.iteration}")
    click.echo(f"checkpoint: {trainer.save()}")


def _retarget_command(name, help_text):
    @main.command(name=name, help=help_text)
    @click.option("--ckpt", required=True, type=click.Path(exists=True))
    @click.option("--source", type=click.Choice(["A", "B"]), default="B")
    @click.option("--out", "out_dir", required=True, type=click.Path())
    @click.option("--no-affine", is_flag=True, help="skip the learned affine transform")
    @click.option("--range", "frame_range", default=None,
                  help="START:STOP slice of source frames")
    @click.option("--save-keypoints", is_flag=True)
    def command(ckpt, source, out_dir, no_affine, frame_range, save_keypoints):
        rng = None
        if frame_range:
            start, stop = frame_range.split(":")
            rng = (int(start), int(stop))
        request = RetargetRequest(checkpoint=ckpt, source_domain=source,
                                  apply_learned_affine=not no_affine, frame_range=rng)
        frames, keypoints = retarget(request)
        _write_sequence(frames, keypoints, Path(out_dir), save_keypoints)
        click.echo(f"wrote {frames.shape[0]} frames to {out_dir}")

    return command


_retarget_command("retarget", "Render one video's motion in the other's style.")
_retarget_command("sync", "Synchronize a short clip pair (same machinery as retarget).")


@main.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--frame", "frame_path", required=True, type=click.Path(exists=True))
@click.option("--domain", type=click.Choice(["A", "B"]), default="A")
@click.option("--move", "moves", multiple=True,
              help="keypoint override INDEX:U,V (repeatable)")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--keypoints-out", type=click.Path(), default=None)
def edit(ckpt, frame_path, domain, moves, out_path, keypoints_out):
    """Move keypoints of one frame and regenerate it."""
    models, manifest = load_checkpoint(ckpt)
    res = int(manifest["resolution"])
    img = Image.open(frame_path).convert("RGB")
    if img.size != (res, res):
        img = img.resize((res, res), Image.BILINEAR)
    frame = torch.from_numpy(np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 255.0)
    overrides = []
    for move in moves:
        index, coords = move.split(":")
        u, v = coords.split(",")
        overrides.append((int(index), float(u), float(v)))
    rendered, keypoints = edit_frame(models, frame, domain, overrides)
    _save_frame(rendered, Path(out_path))
    if keypoints_out:
        Path(keypoints_out).write_text(json.dumps(keypoints_to_json(keypoints)))
    click.echo(f"wrote {out_path}")


@main.command(name="eval")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--report", "report_path", required=True, type=click.Path())
def evaluate(ckpt, report_path):
    """Reconstruction and temporal-coherence metrics for a checkpoint."""
    from .train import dataset_for_manifest

    models, manifest = load_checkpoint(ckpt)
    dataset = dataset_for_manifest(manifest)
    report = {"checkpoint": str(ckpt),
              "reconstruction": reconstruction_report(models, dataset)}
    displacement = {}
    for domain in ("A", "B"):
        frames = frames_to_tensor(dataset.frames(domain))
        with torch.no_grad():
            kps = [models.extract(frames[i:i + 16])[1]
                   for i in range(0, frames.shape[0], 16)]
        sequence = torch.cat(kps)
        displacement[domain] = temporal_displacement(list(sequence)).mean_adjacent_displacement
    report["temporal_displacement"] = displacement
    Path(report_path).parent.mkdir(parents=True, exist_ok=True)
    Path(report_path).write_text(json.dumps(report, indent=2))
    click.echo(f"wrote {report_path}")


@main.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve(ckpt, host, port):
    """Start the HTTP inference service for a checkpoint."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(ckpt), host=host, port=port)


@main.command(name="toy-data")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--frames", "num_frames", default=60, type=int)
@click.option("--resolution", default=64, type=int)
def toy_data(out_dir, num_frames, resolution):
    """Write the synthetic ellipse pair as PNG directories (with masks)."""
    from .synthetic import ellipse_pair, write_video_dir

    dataset = ellipse_pair(num_frames=num_frames, resolution=resolution)
    out = Path(out_dir)
    write_video_dir(dataset.frames_a, out / "video_a", dataset.masks_a)
    write_video_dir(dataset.frames_b, out / "video_b", dataset.masks_b)
    click.echo(f"wrote {num_frames} frames per domain under {out}")


if __name__ == "__main__":
    main()
