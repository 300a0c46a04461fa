import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))  # oracles / gradcheck helpers

from jokr.config import ModelConfig
from jokr.models import build_models


@pytest.fixture(scope="session")
def tiny_model_config():
    return ModelConfig(num_keypoints=3, extractor_channels=4,
                       generator_channels=4, generator_blocks=1,
                       refiner_channels=4, refiner_blocks=1,
                       discriminator_hidden=8)


@pytest.fixture()
def tiny_models(tiny_model_config):
    return build_models(tiny_model_config, resolution=32, seed=0)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


@pytest.fixture()
def tiny_checkpoint(tiny_models, tmp_path):
    """Untrained 32px checkpoint whose manifest points at the synthetic
    ellipse pair (so dataset_for_manifest can reload it)."""
    from jokr.config import config_to_dict
    from jokr.models import save_checkpoint

    manifest = {
        "K": tiny_models.config.num_keypoints, "resolution": tiny_models.resolution,
        "sigma": tiny_models.config.sigma, "alpha": tiny_models.config.alpha,
        "iteration": 0, "stage": 1, "config_hash": "test",
        "path_a": "synthetic:ellipse_a", "path_b": "synthetic:ellipse_b",
        "model": config_to_dict(tiny_models.config), "data": {}, "train": {},
    }
    return save_checkpoint(tmp_path / "ckpt", tiny_models, manifest)
