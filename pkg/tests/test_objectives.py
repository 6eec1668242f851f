"""Loss terms and metrics: closed forms vs Monte Carlo, SSIM vs scikit-image, pins."""

import math

import pytest
import torch
from skimage.metrics import structural_similarity

from splat4d.objectives import (LatentGaussian, LossWeights, ObjectiveError, image_distance,
                                kl_to_standard_normal, loss_depth, loss_rgb, loss_rgb_diff,
                                metrics, mre, psnr, ssim, total_loss)

DTYPE = torch.float64


class TestLossWeights:
    def test_defaults(self):
        w = LossWeights()
        assert w.lambda_depth == pytest.approx(0.1)
        assert w.depth_clamp == pytest.approx(10.0)

    def test_rejects_negative(self):
        with pytest.raises(ObjectiveError):
            LossWeights(lambda_rgb=-1.0)

    def test_rejects_mixing_outside_unit_interval(self):
        with pytest.raises(ObjectiveError):
            LossWeights(lambda1=1.5)


class TestKL:
    def test_standard_normal_is_zero(self):
        q = LatentGaussian(torch.zeros(8, dtype=DTYPE), torch.ones(8, dtype=DTYPE))
        assert float(kl_to_standard_normal(q)) == pytest.approx(0.0, abs=1e-12)

    def test_closed_form_vs_monte_carlo(self):
        # KL(q||p) = E_q[log q(x) - log p(x)] estimated with 1e6 samples
        gen = torch.Generator().manual_seed(0)
        mean = torch.tensor([0.5, -0.3, 1.2], dtype=DTYPE)
        std = torch.tensor([0.8, 1.5, 0.4], dtype=DTYPE)
        q = LatentGaussian(mean, std)
        n = 1_000_000
        x = mean + std * torch.randn(n, 3, generator=gen, dtype=DTYPE)
        log_q = (-0.5 * ((x - mean) / std) ** 2 - torch.log(std)
                 - 0.5 * math.log(2 * math.pi)).sum(-1)
        log_p = (-0.5 * x ** 2 - 0.5 * math.log(2 * math.pi)).sum(-1)
        mc = float((log_q - log_p).mean())
        closed = float(kl_to_standard_normal(q))
        assert closed == pytest.approx(mc, rel=0.01)

    def test_rejects_nonpositive_std(self):
        with pytest.raises(ObjectiveError):
            LatentGaussian(torch.zeros(2, dtype=DTYPE), torch.tensor([1.0, 0.0], dtype=DTYPE))


class TestDepth:
    def test_mre_clamp_pins_huge_error_to_ten(self):
        d = torch.tensor([[1.0]], dtype=DTYPE)
        d_pred = torch.tensor([[51.0]], dtype=DTYPE)  # 50x relative error
        assert float(mre(d, d_pred, clamp=10.0)) == pytest.approx(10.0, abs=0.0)

    def test_mre_basic(self):
        d = torch.tensor([[2.0, 4.0]], dtype=DTYPE)
        d_pred = torch.tensor([[2.2, 3.0]], dtype=DTYPE)
        assert float(mre(d, d_pred, clamp=10.0)) == pytest.approx((0.1 + 0.25) / 2)

    def test_mre_respects_mask(self):
        d = torch.tensor([[2.0, 4.0]], dtype=DTYPE)
        d_pred = torch.tensor([[2.2, 100.0]], dtype=DTYPE)
        mask = torch.tensor([[True, False]])
        assert float(mre(d, d_pred, clamp=10.0, valid_mask=mask)) == pytest.approx(0.1)

    def test_mre_empty_mask_raises(self):
        d = torch.ones(2, 2, dtype=DTYPE)
        with pytest.raises(ObjectiveError):
            mre(d, d, clamp=10.0, valid_mask=torch.zeros(2, 2, dtype=torch.bool))

    def test_mre_rejects_nonpositive_ground_truth(self):
        d = torch.tensor([[0.0]], dtype=DTYPE)
        with pytest.raises(ObjectiveError):
            mre(d, d, clamp=10.0)

    def test_loss_depth_mixes_times(self):
        d = torch.full((3, 3), 2.0, dtype=DTYPE)
        a = torch.full((3, 3), 2.2, dtype=DTYPE)   # MRE 0.1
        b = torch.full((3, 3), 3.0, dtype=DTYPE)   # MRE 0.5
        got = float(loss_depth(d, a, d, b, lambda2=0.25, clamp=10.0))
        assert got == pytest.approx(0.25 * 0.1 + 0.75 * 0.5)


class TestPSNR:
    def test_zero_vs_point_one_is_twenty_db(self):
        img = torch.zeros(16, 16, 3, dtype=DTYPE)
        pred = torch.full((16, 16, 3), 0.1, dtype=DTYPE)
        assert psnr(img, pred) == 20.0

    def test_identical_is_capped(self):
        img = torch.rand(8, 8, 3, generator=torch.Generator().manual_seed(1), dtype=DTYPE)
        assert psnr(img, img) == 99.0


class TestSSIM:
    def test_identical_images(self):
        img = torch.rand(32, 32, 3, generator=torch.Generator().manual_seed(2), dtype=DTYPE)
        assert float(ssim(img, img)) == pytest.approx(1.0, abs=1e-12)

    def test_matches_scikit_image(self):
        gen = torch.Generator().manual_seed(3)
        a = torch.rand(48, 48, generator=gen, dtype=DTYPE)
        b = torch.clamp(a + 0.1 * torch.randn(48, 48, generator=gen, dtype=DTYPE), 0, 1)
        ref = structural_similarity(
            a.numpy(), b.numpy(), win_size=11, gaussian_weights=True, sigma=1.5,
            use_sample_covariance=False, data_range=1.0,
        )
        # scikit-image averages over the full (padded) image; compare loosely
        assert float(ssim(a, b)) == pytest.approx(ref, abs=0.02)

    def test_small_image_window_shrinks(self):
        gen = torch.Generator().manual_seed(4)
        a = torch.rand(8, 8, 3, generator=gen, dtype=DTYPE)
        b = torch.rand(8, 8, 3, generator=gen, dtype=DTYPE)
        v = float(ssim(a, b))
        assert -1.0 <= v <= 1.0

    def test_differentiable(self):
        gen = torch.Generator().manual_seed(5)
        a = torch.rand(16, 16, generator=gen, dtype=DTYPE)
        b = torch.rand(16, 16, generator=gen, dtype=DTYPE).requires_grad_(True)
        ssim(a, b).backward()
        assert b.grad is not None and torch.isfinite(b.grad).all()


class TestImageLosses:
    def test_rgb_diff_zero_when_differences_match(self):
        gen = torch.Generator().manual_seed(6)
        i0 = torch.rand(8, 8, 3, generator=gen, dtype=DTYPE)
        i1 = torch.rand(8, 8, 3, generator=gen, dtype=DTYPE)
        shift = torch.full_like(i0, 0.05)
        # predictions offset by a constant: differences agree exactly
        assert float(loss_rgb_diff(i1, i0, i1 + shift, i0 + shift)) == pytest.approx(0.0, abs=1e-12)

    def test_rgb_diff_is_l1_of_difference_images(self):
        i0 = torch.zeros(2, 2, 3, dtype=DTYPE)
        i1 = torch.full((2, 2, 3), 0.5, dtype=DTYPE)
        got = float(loss_rgb_diff(i1, i0, i0, i0))  # predicted difference is zero
        assert got == pytest.approx(0.5)

    def test_image_distance_zero_for_identical(self):
        img = torch.rand(16, 16, 3, generator=torch.Generator().manual_seed(7), dtype=DTYPE)
        assert float(image_distance(img, img)) == pytest.approx(0.0, abs=1e-12)

    def test_loss_rgb_mixes_times(self):
        gen = torch.Generator().manual_seed(8)
        a = torch.rand(16, 16, 3, generator=gen, dtype=DTYPE)
        b = torch.rand(16, 16, 3, generator=gen, dtype=DTYPE)
        da = float(image_distance(a, b))
        assert float(loss_rgb(a, b, a, a, lambda1=0.3)) == pytest.approx(0.3 * da)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ObjectiveError):
            image_distance(torch.zeros(4, 4, 3, dtype=DTYPE), torch.zeros(5, 5, 3, dtype=DTYPE))


class TestTotalLoss:
    def test_weighted_sum(self):
        w = LossWeights(lambda_rgb=1.0, lambda_depth=0.1, lambda_rgb_diff=2.0, lambda_kl=1e-3)
        terms = [torch.tensor(v, dtype=DTYPE) for v in (0.5, 0.25, 0.125, 8.0)]
        got = float(total_loss(*terms, w))
        assert got == pytest.approx(1.0 * 0.5 + 0.1 * 0.25 + 2.0 * 0.125 + 1e-3 * 8.0)


class TestMetrics:
    def test_record_contents(self):
        gen = torch.Generator().manual_seed(9)
        img = torch.rand(16, 16, 3, generator=gen, dtype=DTYPE)
        pred = torch.clamp(img + 0.05, 0, 1)
        d = torch.full((16, 16), 3.0, dtype=DTYPE)
        rec = metrics(img, pred, depth=d, depth_pred=d * 1.1)
        assert set(rec) == {"psnr", "ssim", "depth_mre"}
        assert rec["depth_mre"] == pytest.approx(0.1)

    def test_without_depth(self):
        img = torch.rand(8, 8, 3, generator=torch.Generator().manual_seed(10), dtype=DTYPE)
        assert set(metrics(img, img)) == {"psnr", "ssim"}
