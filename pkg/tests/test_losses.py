import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from jokr.config import LossWeights
from jokr.errors import SingularTransform
from jokr.keypoints import (apply_affine, expect_keypoints, identity_affine,
                            spatial_softmax, warp_frame)
from jokr.losses import (ConvFeatures, IdentityFeatures, LinearFeatures,
                         combine_stage1, combine_stage2, loss_discriminator,
                         loss_domain_confusion, loss_equivariance, loss_l1,
                         loss_lpips, loss_seg, loss_separation,
                         loss_silhouette, loss_temporal)

from oracles import (bce_ref, l1_ref, linear_lpips_ref, mse_ref,
                     separation_ref, silhouette_ref, temporal_ref)


class StubDisc:
    """Deterministic discriminator: sigmoid of a fixed projection."""

    def __init__(self, seed=0, constant=None):
        self.constant = constant
        gen = torch.Generator().manual_seed(seed)
        self.w = torch.randn(32, generator=gen, dtype=torch.float64)

    def __call__(self, kp):
        if self.constant is not None:
            return torch.full((kp.shape[0], 1), self.constant, dtype=kp.dtype)
        flat = kp.reshape(kp.shape[0], -1).double()
        w = self.w[:flat.shape[1]].to(flat.dtype)
        return torch.sigmoid(flat @ w[:, None]).to(kp.dtype)


def rand_kp(rng, n=4, k=3):
    return torch.tensor(rng.uniform(-1, 1, size=(n, k, 2)), dtype=torch.float64)


class TestPixelLosses:
    def test_seg_identical_zero(self):
        x = torch.rand(2, 1, 8, 8)
        assert loss_seg(x, x).item() == 0.0

    def test_seg_zero_vs_one(self):
        assert loss_seg(torch.zeros(1, 1, 4, 4), torch.ones(1, 1, 4, 4)).item() == 1.0

    def test_seg_oracle(self):
        rng = np.random.default_rng(0)
        x = torch.tensor(rng.random((2, 1, 5, 5)))
        y = torch.tensor(rng.random((2, 1, 5, 5)))
        assert loss_seg(x, y).item() == pytest.approx(mse_ref(x.numpy(), y.numpy()), rel=1e-9)

    def test_l1_identical_zero(self):
        x = torch.rand(2, 3, 8, 8)
        assert loss_l1(x, x).item() == 0.0

    def test_l1_zero_vs_one(self):
        assert loss_l1(torch.zeros(1, 3, 4, 4), torch.ones(1, 3, 4, 4)).item() == 1.0

    def test_l1_oracle(self):
        rng = np.random.default_rng(1)
        x = torch.tensor(rng.random((2, 3, 4, 4)))
        y = torch.tensor(rng.random((2, 3, 4, 4)))
        assert loss_l1(x, y).item() == pytest.approx(l1_ref(x.numpy(), y.numpy()), rel=1e-9)


class TestPerceptual:
    def test_identical_zero(self):
        x = torch.rand(2, 3, 8, 8)
        assert loss_lpips(x, x, IdentityFeatures()).item() == 0.0
        assert loss_lpips(x, x, ConvFeatures(channels=4)).item() == 0.0

    def test_identity_extractor_is_pixel_mse(self):
        rng = np.random.default_rng(2)
        x = torch.tensor(rng.random((2, 3, 6, 6)))
        y = torch.tensor(rng.random((2, 3, 6, 6)))
        assert loss_lpips(x, y, IdentityFeatures()).item() == pytest.approx(
            mse_ref(x.numpy(), y.numpy()), rel=1e-9)

    def test_linear_extractor_oracle(self):
        rng = np.random.default_rng(3)
        x = torch.tensor(rng.random((2, 3, 4, 4)))
        y = torch.tensor(rng.random((2, 3, 4, 4)))
        w = torch.tensor(rng.normal(size=(5, 48)))
        got = loss_lpips(x, y, LinearFeatures(w)).item()
        want = linear_lpips_ref(x.numpy(), y.numpy(), w.tolist())
        assert got == pytest.approx(want, rel=1e-9)


class TestAdversarial:
    def test_constant_half_confusion(self):
        rng = np.random.default_rng(4)
        d = StubDisc(constant=0.5)
        value = loss_domain_confusion(d, rand_kp(rng), rand_kp(rng))
        assert value.item() == pytest.approx(-math.log(0.5), rel=1e-7)

    def test_perfect_confusion_zero(self):
        rng = np.random.default_rng(5)
        d = StubDisc(constant=1.0)
        value = loss_domain_confusion(d, rand_kp(rng), rand_kp(rng))
        assert value.item() == pytest.approx(0.0, abs=1e-6)

    def test_confusion_oracle(self):
        rng = np.random.default_rng(6)
        d = StubDisc(seed=1)
        kp_a, kp_b = rand_kp(rng), rand_kp(rng, n=3)
        got = loss_domain_confusion(d, kp_a, kp_b).item()
        outs = torch.cat([d(kp_a), d(kp_b)]).squeeze(1).tolist()
        assert got == pytest.approx(bce_ref(outs, [1.0] * len(outs)), rel=1e-7)

    def test_symmetric_variant(self):
        rng = np.random.default_rng(7)
        d = StubDisc(constant=0.5)
        value = loss_domain_confusion(d, rand_kp(rng), rand_kp(rng), symmetric=True)
        assert value.item() == pytest.approx(-math.log(0.5), rel=1e-7)

    def test_discriminator_labels(self):
        rng = np.random.default_rng(8)
        d = StubDisc(seed=2)
        kp_a, kp_b = rand_kp(rng), rand_kp(rng, n=5)
        got = loss_discriminator(d, kp_a, kp_b).item()
        out_a = d(kp_a).squeeze(1).tolist()
        out_b = d(kp_b).squeeze(1).tolist()
        want = bce_ref(out_a + out_b, [0.0] * len(out_a) + [1.0] * len(out_b))
        assert got == pytest.approx(want, rel=1e-7)

    def test_constant_half_matches_both_sides(self):
        rng = np.random.default_rng(9)
        d = StubDisc(constant=0.5)
        kp_a, kp_b = rand_kp(rng), rand_kp(rng)
        dc = loss_domain_confusion(d, kp_a, kp_b).item()
        dd = loss_discriminator(d, kp_a, kp_b).item()
        assert dc == pytest.approx(-math.log(0.5), rel=1e-7)
        assert dd == pytest.approx(-math.log(0.5), rel=1e-7)


class TestTemporal:
    def test_identical_zero(self):
        rng = np.random.default_rng(10)
        kp = rand_kp(rng)
        assert loss_temporal(kp, kp).item() == 0.0

    def test_single_displacement(self):
        a = torch.zeros(1, 1, 2)
        b = torch.tensor([[[0.3, 0.4]]])
        assert loss_temporal(a, b).item() == pytest.approx(0.25, rel=1e-6)

    def test_oracle(self):
        rng = np.random.default_rng(11)
        a, b = rand_kp(rng), rand_kp(rng)
        assert loss_temporal(a, b).item() == pytest.approx(
            temporal_ref(a.numpy(), b.numpy()), rel=1e-9)

    @given(st.integers(0, 1000))
    @settings(max_examples=20, deadline=None)
    def test_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rand_kp(rng), rand_kp(rng)
        assert loss_temporal(a, b).item() == pytest.approx(
            loss_temporal(b, a).item(), rel=1e-12)


class CentroidExtractor:
    """Synthetic extractor whose keypoint is the intensity centroid: the
    normalized intensity map is itself a heatmap, so the expectation is
    exactly the centroid and the whole thing is affine-equivariant for
    content that stays in frame."""

    def __call__(self, frames):
        intensity = frames.sum(dim=1, keepdim=True) + 1e-12
        hm = intensity / intensity.sum(dim=(-2, -1), keepdim=True)
        return hm, expect_keypoints(hm)


class TinyExtractor(torch.nn.Module):
    def __init__(self, k=2, seed=0):
        super().__init__()
        torch.manual_seed(seed)
        self.conv = torch.nn.Conv2d(3, k, 3, padding=1)

    def forward(self, frames):
        hm = spatial_softmax(self.conv(frames))
        return hm, expect_keypoints(hm)


class TestEquivariance:
    def test_identity_exact_zero(self):
        rng = np.random.default_rng(12)
        e = TinyExtractor(seed=3)
        frames = torch.tensor(rng.random((2, 3, 8, 8)), dtype=torch.float32)
        assert loss_equivariance(e, frames, identity_affine()).item() == 0.0

    def test_centroid_translation_small(self):
        frames = torch.zeros(1, 3, 32, 32)
        frames[:, :, 12:20, 10:18] = 1.0
        t = torch.tensor([[1.0, 0.0, 0.15], [0.0, 1.0, -0.1]])
        value = loss_equivariance(CentroidExtractor(), frames, t).item()
        assert value < 2.0 / 32

    def test_matches_hand_assembled_branches(self):
        rng = np.random.default_rng(13)
        e = TinyExtractor(seed=4)
        frames = torch.tensor(rng.random((2, 3, 8, 8)), dtype=torch.float32)
        t = torch.tensor([[0.9, 0.1, 0.05], [-0.1, 1.1, -0.02]])
        got = loss_equivariance(e, frames, t).item()
        _, kp = e(frames)
        _, kp_w = e(warp_frame(frames, t))
        want = (apply_affine(kp, t) - kp_w).abs().mean().item()
        assert got == pytest.approx(want, rel=1e-6)

    def test_singular_transform_raises(self):
        e = TinyExtractor()
        frames = torch.rand(1, 3, 8, 8)
        with pytest.raises(SingularTransform):
            loss_equivariance(e, frames, torch.zeros(2, 3))


class TestSeparation:
    def test_coincident_pair(self):
        kp = torch.tensor([[[0.3, 0.3], [0.3, 0.3]]])
        assert loss_separation(kp, delta=0.1).item() == pytest.approx(0.05, rel=1e-7)

    def test_spread_points_zero(self):
        kp = torch.tensor([[[-0.8, -0.8], [0.8, 0.8], [0.8, -0.8]]])
        assert loss_separation(kp, delta=0.1).item() == 0.0

    def test_oracle_k14(self):
        rng = np.random.default_rng(14)
        kp = torch.tensor(rng.uniform(-0.2, 0.2, size=(14, 2)), dtype=torch.float64)
        got = loss_separation(kp, delta=0.1).item()
        assert got == pytest.approx(separation_ref(kp.tolist(), 0.1), rel=1e-9)

    @given(st.integers(0, 1000))
    @settings(max_examples=20, deadline=None)
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        kp = torch.tensor(rng.uniform(-0.3, 0.3, size=(1, 6, 2)))
        perm = torch.tensor(rng.permutation(6))
        assert loss_separation(kp, 0.1).item() == pytest.approx(
            loss_separation(kp[:, perm], 0.1).item(), rel=1e-6)


class TestSilhouette:
    def test_inside_mask_zero(self):
        hm = spatial_softmax(torch.randn(1, 2, 8, 8))
        mask = torch.ones(1, 1, 8, 8)
        assert loss_silhouette(hm, mask).item() == pytest.approx(0.0, abs=1e-6)

    def test_outside_mask_clamp_floor(self):
        hm = torch.zeros(1, 1, 8, 8)
        hm[0, 0, 0, 0] = 1.0
        mask = torch.ones(1, 1, 8, 8)
        mask[0, 0, 0, 0] = 0.0
        value = loss_silhouette(hm, mask).item()
        assert value == pytest.approx(-math.log(1e-8), rel=1e-6)

    def test_oracle(self):
        rng = np.random.default_rng(15)
        hm = torch.tensor(rng.random((3, 8, 8)), dtype=torch.float64)
        hm = hm / hm.sum(dim=(-2, -1), keepdim=True)
        mask = torch.tensor(rng.random((8, 8)), dtype=torch.float64)
        got = loss_silhouette(hm, mask).item()
        assert got == pytest.approx(silhouette_ref(hm.tolist(), mask.tolist()), rel=1e-9)

    def test_mask_downsampling(self):
        hm = spatial_softmax(torch.randn(1, 2, 8, 8).double())
        mask = torch.ones(1, 1, 32, 32).double()
        assert loss_silhouette(hm, mask).item() == pytest.approx(0.0, abs=1e-6)


class TestTotals:
    def test_stage1_unit_terms(self):
        terms = {name: torch.tensor(1.0) for name in
                 ("seg", "dc", "tmp", "eq", "sep", "sill")}
        total, breakdown = combine_stage1(terms, LossWeights())
        assert total.item() == 54.0
        assert set(breakdown) == set(terms)

    def test_stage1_zero_terms(self):
        terms = {name: torch.tensor(0.0) for name in
                 ("seg", "dc", "tmp", "eq", "sep", "sill")}
        total, _ = combine_stage1(terms, LossWeights())
        assert total.item() == 0.0

    def test_stage2_unit_terms(self):
        total, _ = combine_stage2({"l1": torch.tensor(1.0), "lpips": torch.tensor(1.0)},
                                  LossWeights())
        assert total.item() == 3.0

    def test_stage2_zero_terms(self):
        total, _ = combine_stage2({"l1": torch.tensor(0.0), "lpips": torch.tensor(0.0)},
                                  LossWeights())
        assert total.item() == 0.0

    def test_missing_term_rejected(self):
        with pytest.raises(ValueError):
            combine_stage1({"seg": torch.tensor(1.0)}, LossWeights())


class TestNonnegativity:
    @given(st.integers(0, 500))
    @settings(max_examples=15, deadline=None)
    def test_all_losses_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        x = torch.tensor(rng.random((2, 3, 8, 8)))
        y = torch.tensor(rng.random((2, 3, 8, 8)))
        kp_a, kp_b = rand_kp(rng), rand_kp(rng)
        d = StubDisc(seed=seed)
        hm = spatial_softmax(torch.tensor(rng.normal(size=(2, 3, 8, 8))))
        mask = torch.tensor(rng.random((2, 1, 8, 8)))
        values = [
            loss_seg(x[:, :1], y[:, :1]), loss_l1(x, y),
            loss_lpips(x, y, IdentityFeatures()),
            loss_domain_confusion(d, kp_a, kp_b),
            loss_discriminator(d, kp_a, kp_b),
            loss_temporal(kp_a, kp_b),
            loss_separation(kp_a, 0.1),
            loss_silhouette(hm, mask),
        ]
        for v in values:
            assert v.item() >= 0.0
