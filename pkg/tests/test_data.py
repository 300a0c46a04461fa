import numpy as np
import pytest
import torch
from PIL import Image

from jokr.config import IngestConfig
from jokr.data import (MASK_PROVIDERS, load_pair, mask_from_external,
                       mask_from_threshold, modal_border_color,
                       register_mask_provider, sample_batch)
from jokr.errors import (MaskMismatch, MissingInput, ProviderFailure, TooShort)
from jokr.synthetic import ellipse_mask, ellipse_pair, write_video_dir


def write_frames(tmp_path, name, count, size=256, color_fn=None):
    out = tmp_path / name
    out.mkdir()
    rng = np.random.default_rng(0)
    for i in range(count):
        if color_fn:
            arr = color_fn(i, size)
        else:
            arr = np.zeros((size, size, 3), np.uint8)
            arr[size // 4: 3 * size // 4, size // 4: 3 * size // 4] = (200, 80, 30)
        Image.fromarray(arr).save(out / f"{i:05d}.png")
    return out


class TestLoadPair:
    def test_resize_contract(self, tmp_path):
        a = write_frames(tmp_path, "a", 60, size=256)
        b = write_frames(tmp_path, "b", 60, size=256)
        ds = load_pair(a, b, IngestConfig(resolution=128))
        assert ds.frames_a.shape == (60, 128, 128, 3)
        assert ds.frames_b.shape == (60, 128, 128, 3)
        assert ds.frames_a.min() >= 0.0 and ds.frames_a.max() <= 1.0

    def test_single_frame_too_short(self, tmp_path):
        a = write_frames(tmp_path, "a", 1)
        b = write_frames(tmp_path, "b", 5)
        with pytest.raises(TooShort):
            load_pair(a, b, IngestConfig(resolution=64))

    def test_missing_path(self, tmp_path):
        b = write_frames(tmp_path, "b", 5)
        with pytest.raises(MissingInput):
            load_pair(tmp_path / "nope", b, IngestConfig(resolution=64))

    def test_empty_directory(self, tmp_path):
        a = tmp_path / "a"
        a.mkdir()
        b = write_frames(tmp_path, "b", 5)
        with pytest.raises(MissingInput):
            load_pair(a, b, IngestConfig(resolution=64))

    def test_gif_pair(self, tmp_path):
        # the short-clip synchronization setting: ~40 frames per side
        def save_gif(path, count):
            frames = []
            for i in range(count):
                arr = np.zeros((64, 64, 3), np.uint8)
                arr[10 + i % 10: 30 + i % 10, 20:40] = (250, 120, 40)
                frames.append(Image.fromarray(arr))
            frames[0].save(path, save_all=True, append_images=frames[1:],
                           duration=50, loop=0)
        save_gif(tmp_path / "a.gif", 40)
        save_gif(tmp_path / "b.gif", 41)
        ds = load_pair(tmp_path / "a.gif", tmp_path / "b.gif",
                       IngestConfig(resolution=64))
        assert len(ds.frames_a) == 40
        assert len(ds.frames_b) == 41

    def test_deterministic_loading(self, tmp_path):
        a = write_frames(tmp_path, "a", 4)
        b = write_frames(tmp_path, "b", 4)
        cfg = IngestConfig(resolution=64)
        d1 = load_pair(a, b, cfg)
        d2 = load_pair(a, b, cfg)
        assert np.array_equal(d1.frames_a, d2.frames_a)
        assert np.array_equal(d1.masks_b, d2.masks_b)

    def test_ground_truth_masks(self, tmp_path):
        ds = ellipse_pair(num_frames=5, resolution=64)
        write_video_dir(ds.frames_a, tmp_path / "a", ds.masks_a)
        write_video_dir(ds.frames_b, tmp_path / "b", ds.masks_b)
        cfg = IngestConfig(resolution=64, mask_provider="ground_truth",
                           mask_dir_a=str(tmp_path / "a_masks"),
                           mask_dir_b=str(tmp_path / "b_masks"),
                           apply_mask_to_frames=False)
        loaded = load_pair(tmp_path / "a", tmp_path / "b", cfg)
        assert np.allclose(loaded.masks_a, ds.masks_a, atol=1 / 255)

    def test_premultiply_blacks_out_background(self, tmp_path):
        a = write_frames(tmp_path, "a", 3)
        b = write_frames(tmp_path, "b", 3)
        ds = load_pair(a, b, IngestConfig(resolution=64, threshold=0.2))
        outside = ds.frames_a * (1 - ds.masks_a[..., None])
        assert outside.max() == 0.0


class TestThresholdMask:
    def test_all_background(self):
        frame = np.full((16, 16, 3), 0.5, np.float32)
        assert mask_from_threshold(frame, 0.5).sum() == 0.0

    def test_all_foreground(self):
        frame = np.zeros((16, 16, 3), np.float32)
        frame[:] = (1.0, 0.2, 0.1)
        # border is foreground-colored too, so pass the background explicitly
        mask = mask_from_threshold(frame, 0.5, background_color=(0, 0, 0))
        assert mask.min() == 1.0

    def test_ellipse_rasterization_exact(self):
        res = 64
        want = ellipse_mask(res, (0.1, -0.2), (0.4, 0.3))
        frame = np.zeros((res, res, 3), np.float32)
        frame[want > 0] = (0.9, 0.6, 0.1)
        got = mask_from_threshold(frame, 0.5)
        assert np.array_equal(got, want)

    def test_modal_border_color(self):
        frame = np.zeros((8, 8, 3), np.float32)
        frame[:] = (0.25, 0.5, 0.75)
        frame[3:5, 3:5] = (1, 0, 0)
        assert np.allclose(modal_border_color(frame), (0.25, 0.5, 0.75), atol=1 / 255)

    def test_threshold_bounds(self):
        frame = np.zeros((4, 4, 3), np.float32)
        with pytest.raises(ValueError):
            mask_from_threshold(frame, 0.0)


class TestExternalMask:
    def test_constant_provider(self):
        frame = np.random.default_rng(0).random((8, 8, 3)).astype(np.float32)
        mask = mask_from_external(frame, lambda f: np.ones(f.shape[:2]))
        assert mask.min() == 1.0

    def test_wrong_shape(self):
        frame = np.zeros((8, 8, 3), np.float32)
        with pytest.raises(MaskMismatch):
            mask_from_external(frame, lambda f: np.ones((4, 4)))

    def test_identity_provider_byte_exact(self):
        rng = np.random.default_rng(1)
        stored = (rng.random((8, 8)) > 0.5).astype(np.float32)
        mask = mask_from_external(np.zeros((8, 8, 3), np.float32), lambda f: stored)
        assert np.array_equal(mask, stored)

    def test_provider_failure_carries_index(self):
        def broken(frame):
            raise RuntimeError("boom")
        with pytest.raises(ProviderFailure) as exc:
            mask_from_external(np.zeros((4, 4, 3), np.float32), broken, frame_index=7)
        assert exc.value.frame_index == 7

    def test_values_clamped(self):
        frame = np.zeros((4, 4, 3), np.float32)
        mask = mask_from_external(frame, lambda f: np.full(f.shape[:2], 3.0))
        assert mask.max() == 1.0

    def test_registry_used_by_load_pair(self, tmp_path):
        register_mask_provider("test_constant", lambda f: np.ones(f.shape[:2]))
        try:
            a = write_frames(tmp_path, "a", 3, size=64)
            b = write_frames(tmp_path, "b", 3, size=64)
            cfg = IngestConfig(resolution=64, mask_provider="external",
                               external_provider="test_constant")
            ds = load_pair(a, b, cfg)
            assert ds.masks_a.min() == 1.0
        finally:
            MASK_PROVIDERS.pop("test_constant", None)


class TestSampleBatch:
    def test_seed_determinism(self):
        ds = ellipse_pair(num_frames=10, resolution=64)
        b1 = sample_batch(ds, 6, rng=42)
        b2 = sample_batch(ds, 6, rng=42)
        assert np.array_equal(b1.indices, b2.indices)
        assert torch.equal(b1.frames, b2.frames)

    def test_two_frame_dataset(self):
        ds = ellipse_pair(num_frames=2, resolution=64)
        batch = sample_batch(ds, 1, rng=0)
        assert batch.indices.tolist() == [0]
        assert batch.domains.tolist() == ["A"]
        assert torch.allclose(batch.next_frames[0],
                              torch.from_numpy(ds.frames_a[1].transpose(2, 0, 1)))

    def test_successor_structure(self):
        ds = ellipse_pair(num_frames=12, resolution=64)
        batch = sample_batch(ds, 8, rng=3)
        assert len(batch.frames) == 8
        assert batch.n_a == 4
        for i in range(8):
            video = ds.frames(batch.domains[i])
            idx = batch.indices[i]
            assert idx + 1 < len(video)  # last frame never a base element
            assert torch.allclose(batch.frames[i],
                                  torch.from_numpy(video[idx].transpose(2, 0, 1)))
            assert torch.allclose(batch.next_frames[i],
                                  torch.from_numpy(video[idx + 1].transpose(2, 0, 1)))

    def test_uniform_distribution_chi2(self):
        from scipy import stats

        ds = ellipse_pair(num_frames=60, resolution=64)
        batch = sample_batch(ds, 10_000, rng=123)
        idx_a = batch.indices[batch.domains == "A"]
        counts = np.bincount(idx_a, minlength=59)
        assert len(counts) == 59  # indices 0..58 only
        chi2 = ((counts - counts.mean()) ** 2 / counts.mean()).sum()
        assert chi2 < stats.chi2.ppf(0.999, df=58)


class TestResizeMaskCommutation:
    def test_constant_mask_commutes(self):
        # bilinear resize commutes with a constant mask multiply
        rng = np.random.default_rng(2)
        frame = rng.random((32, 32)).astype(np.float32)
        c = 0.37
        def resize(arr):
            img = Image.fromarray(arr, mode="F")
            return np.asarray(img.resize((16, 16), Image.BILINEAR))
        lhs = resize(frame * c)
        rhs = resize(frame) * c
        assert np.abs(lhs - rhs).max() < 1e-6
