"""Fitter: initialization quality, optimization loop mechanics, motion sampling."""

import dataclasses

import pytest
import torch

from splat4d.camera import DTYPE, CameraIntrinsics, Pose
from splat4d.fitter import (FitError, FitProblem, FitTarget, LearningRates, fit, init_splat_map,
                            sample_motion)
from splat4d.motion import ObjectMotion, aggregate, propagate
from splat4d.objectives import LossWeights, psnr
from splat4d.rasterizer import render
from splat4d.splat_model import STATIC_ID, decode


def _K(size, f=None):
    f = f if f is not None else 1.25 * size
    c = (size - 1) / 2
    return CameraIntrinsics(fx=f, fy=f, cx=c, cy=c, width=size, height=size)


def _inputs(size=16, seed=0):
    # smooth image/depth fields, as a natural photo would be after splatting
    ys, xs = torch.meshgrid(torch.arange(size, dtype=DTYPE), torch.arange(size, dtype=DTYPE),
                            indexing="ij")
    image = torch.stack([xs / size, ys / size, 0.5 + 0.4 * torch.sin(xs / 3)], dim=-1)
    depth = 3.0 + 0.02 * xs + 0.01 * ys
    mask = torch.zeros(size, size, dtype=torch.int64)
    mask[size // 4: size // 2, size // 4: size // 2] = 1
    return image, depth, mask


def _problem(size=16, iterations=2, **kw):
    image, depth, mask = _inputs(size)
    K = _K(size)
    tgt = FitTarget(image=image, depth=depth, pose=Pose.identity(), time=1.0)
    near = FitTarget(image=image, depth=depth, pose=Pose.identity(), time=0.5)
    return FitProblem(input_image=image, input_depth=depth, mask=mask, intrinsics=K,
                      target_far=tgt, target_near=near, iterations=iterations,
                      layers=2, **kw)


class TestInit:
    def test_renders_close_to_input(self):
        # the initializer alone must reproduce the input frame well
        image, depth, mask = _inputs(32)
        K = _K(32)
        m = init_splat_map(image, depth, mask, K, layers=2)
        out = render(decode(m, K), Pose.identity(), K)
        assert psnr(image, out.rgb) >= 25.0

    def test_depth_ladder(self):
        image, depth, mask = _inputs(8)
        m = init_splat_map(image, depth, mask, _K(8), layers=3)
        assert torch.allclose(m.depth_offset, torch.full_like(m.depth_offset, 0.01))
        assert torch.equal(m.object_id, mask)

    def test_rejects_nonpositive_depth(self):
        image, depth, mask = _inputs(8)
        depth[0, 0] = 0.0
        with pytest.raises(FitError):
            init_splat_map(image, depth, mask, _K(8), layers=2)

    def test_rejects_size_mismatch(self):
        image, depth, mask = _inputs(8)
        with pytest.raises(FitError):
            init_splat_map(image[:4], depth, mask, _K(8), layers=2)


class TestProblemValidation:
    def test_rejects_nonpositive_far_time(self):
        image, depth, mask = _inputs(8)
        tgt = FitTarget(image, depth, Pose.identity(), time=0.0)
        with pytest.raises(FitError):
            FitProblem(input_image=image, input_depth=depth, mask=mask, intrinsics=_K(8),
                       target_far=tgt, target_near=tgt)

    def test_rejects_near_time_at_or_after_far(self):
        image, depth, mask = _inputs(8)
        far = FitTarget(image, depth, Pose.identity(), time=1.0)
        near = FitTarget(image, depth, Pose.identity(), time=1.0)
        with pytest.raises(FitError):
            FitProblem(input_image=image, input_depth=depth, mask=mask, intrinsics=_K(8),
                       target_far=far, target_near=near)


class TestFitLoop:
    def test_zero_iterations_returns_initializer(self):
        problem = _problem(iterations=0)
        best_map, table, report = fit(problem)
        ref = init_splat_map(problem.input_image, problem.input_depth, problem.mask,
                             problem.intrinsics, problem.layers)
        assert torch.equal(best_map.color, ref.color)
        assert report.iterations == 0
        assert STATIC_ID in table

    def test_loss_trace_and_best(self):
        best_map, table, report = fit(_problem(iterations=3))
        assert len(report.loss_trace) == 3
        assert report.best_loss == min(report.loss_trace)
        assert report.loss_trace[report.best_iteration] == report.best_loss
        assert "far" in report.final_metrics and "near" in report.final_metrics

    def test_deterministic_across_thread_counts(self):
        saved = torch.get_num_threads()
        try:
            torch.set_num_threads(1)
            _, _, a = fit(_problem(iterations=3))
            torch.set_num_threads(4)
            _, _, b = fit(_problem(iterations=3))
        finally:
            torch.set_num_threads(saved)
        for x, y in zip(a.loss_trace, b.loss_trace):
            assert x == pytest.approx(y, abs=1e-9)

    def test_loss_decreases(self):
        _, _, report = fit(_problem(size=16, iterations=25))
        assert report.best_loss < report.loss_trace[0]

    def test_motion_table_detached(self):
        _, table, _ = fit(_problem(iterations=2))
        for m in table.values():
            assert not m.v_lin.requires_grad


class TestSampleMotion:
    def _table(self):
        z = torch.zeros(3, dtype=DTYPE)
        return {
            STATIC_ID: ObjectMotion.static(),
            1: ObjectMotion(1, torch.tensor([0.1, 0.0, 0.0], dtype=DTYPE),
                            z.clone(), z.clone(), z.clone(), z.clone()),
        }

    def test_seed_deterministic(self):
        a = sample_motion(self._table(), 0.05, seed=3)
        b = sample_motion(self._table(), 0.05, seed=3)
        assert torch.equal(a[1].v_lin, b[1].v_lin)
        assert torch.equal(a[1].omega, b[1].omega)

    def test_different_seeds_differ(self):
        a = sample_motion(self._table(), 0.05, seed=3)
        b = sample_motion(self._table(), 0.05, seed=4)
        assert not torch.equal(a[1].v_lin, b[1].v_lin)

    def test_static_untouched(self):
        out = sample_motion(self._table(), 0.5, seed=0)
        assert out[STATIC_ID].is_zero()

    def test_zero_scale_is_identity(self):
        out = sample_motion(self._table(), 0.0, seed=0)
        assert torch.equal(out[1].v_lin, self._table()[1].v_lin)

    def test_rejects_negative_scale(self):
        with pytest.raises(FitError):
            sample_motion(self._table(), -0.1, seed=0)
