"""Analysis-by-synthesis fitting of the raw splat maps to ground-truth frames.

Replaces amortized prediction: the raw per-pixel channels (and through
aggregation, the per-object motions) are optimized directly with Adam on the
rendering loss, using the rasterizer's exact gradients.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field, replace

import torch

from .camera import DTYPE, CameraIntrinsics, Pose
from .motion import MotionTable, ObjectMotion, aggregate, propagate
from .objectives import (LatentGaussian, LossWeights, kl_to_standard_normal, loss_depth,
                         loss_rgb, loss_rgb_diff, metrics, total_loss)
from .rasterizer import DEFAULT_CONFIG, RenderConfig, render_for_grad
from .splat_model import STATIC_ID, SplatMap, decode

DEPTH_LADDER_STEP = 0.01   # meters between successive layer initializations
VISIBLE_OPACITY = 0.7      # initial opacity of the first layer
OCCLUDED_OPACITY = 0.1     # initial opacity of layers behind the first
FOOTPRINT_FRACTION = 0.5   # initial splat sigma as a fraction of the pixel size


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class LearningRates:
    position: float = 1e-3   # depth offsets and xy offsets
    color: float = 1e-2
    opacity: float = 5e-2
    log_scale: float = 5e-3  # also covers raw rotations
    motion: float = 1e-2     # velocity and acceleration channels


@dataclass
class FitTarget:
    image: torch.Tensor   # (H, W, 3) in [0, 1]
    depth: torch.Tensor   # (H, W) meters
    pose: Pose
    time: float


@dataclass
class FitProblem:
    input_image: torch.Tensor   # (H, W, 3) in [0, 1]
    input_depth: torch.Tensor   # (H, W) meters, > 0
    mask: torch.Tensor          # (H, W) int, 0 = static
    intrinsics: CameraIntrinsics
    target_far: FitTarget       # supervision at t + T
    target_near: FitTarget      # supervision at t + t_r, t_r < T
    weights: LossWeights = field(default_factory=LossWeights)
    iterations: int = 500
    seed: int = 0
    layers: int = 2
    learning_rates: LearningRates = field(default_factory=LearningRates)
    velocity_prior_scale: float = 1.0
    render_config: RenderConfig = DEFAULT_CONFIG

    def __post_init__(self):
        if self.target_far.time <= 0:
            raise FitError("far supervision time T must be positive")
        if not (0 <= self.target_near.time < self.target_far.time):
            raise FitError("near supervision time t_r must lie in [0, T)")


@dataclass
class FitReport:
    loss_trace: list[float]
    best_iteration: int
    best_loss: float
    final_metrics: dict
    wall_clock_seconds: float

    @property
    def iterations(self) -> int:
        return len(self.loss_trace)


def init_splat_map(i_t: torch.Tensor, d_t: torch.Tensor, mask: torch.Tensor,
                   K: CameraIntrinsics, layers: int) -> SplatMap:
    """Initial raw maps: layer depths ladder up from the input depth, colors come
    from the input image, footprints match one pixel at the local depth."""
    if not bool(torch.all(d_t > 0)):
        raise FitError("input depth must be positive everywhere")
    H, W = d_t.shape
    if i_t.shape != (H, W, 3) or mask.shape != (H, W):
        raise FitError("image/depth/mask size mismatch")
    N = layers
    d_t = d_t.to(DTYPE)

    depth_offset = torch.full((N, H, W), DEPTH_LADDER_STEP, dtype=DTYPE)
    color = (i_t.to(DTYPE) * 2.0 - 1.0).expand(N, H, W, 3).clone()

    def logit(p):
        return math.log(p / (1.0 - p))

    opacity_raw = torch.full((N, H, W), logit(OCCLUDED_OPACITY), dtype=DTYPE)
    opacity_raw[0] = logit(VISIBLE_OPACITY)

    pixel_size = FOOTPRINT_FRACTION * max(1.0 / K.fx, 1.0 / K.fy)
    depths = d_t.unsqueeze(0) + DEPTH_LADDER_STEP * torch.arange(
        1, N + 1, dtype=DTYPE).reshape(N, 1, 1)
    log_scale = torch.log(depths * pixel_size).unsqueeze(-1).expand(N, H, W, 3).clone()

    rotation = torch.zeros(N, H, W, 4, dtype=DTYPE)
    rotation[..., 0] = 1.0

    return SplatMap(
        base_depth=d_t,
        depth_offset=depth_offset,
        xy_offset=torch.zeros(N, H, W, 2, dtype=DTYPE),
        rotation=rotation,
        log_scale=log_scale,
        opacity_raw=opacity_raw,
        color=color,
        velocity=torch.zeros(N, H, W, 3, dtype=DTYPE),
        acceleration=torch.zeros(N, H, W, 3, dtype=DTYPE),
        object_id=mask.to(torch.int64),
    )


def _velocity_prior_kl(table: MotionTable, prior_scale: float) -> torch.Tensor:
    """KL of the fitted per-object (v_lin, omega) against a zero-mean Gaussian
    prior with std prior_scale (unit posterior std)."""
    parts = [m for oid, m in sorted(table.items()) if oid != STATIC_ID]
    if not parts:
        return torch.zeros((), dtype=DTYPE)
    mean = torch.cat([torch.cat([m.v_lin, m.omega]) for m in parts]) / prior_scale
    return kl_to_standard_normal(LatentGaussian(mean=mean, std=torch.ones_like(mean)))


def _render_at(splats, motion, dt, pose, K, cfg):
    moved = propagate(splats, motion, dt)
    return render_for_grad(moved, pose, K, cfg)


def _objective(smap: SplatMap, problem: FitProblem):
    K = problem.intrinsics
    cfg = problem.render_config
    w = problem.weights
    splats = decode(smap, K)
    table = aggregate(splats)

    far, near = problem.target_far, problem.target_near
    rgb_far, depth_far, acc_far = _render_at(splats, table, far.time, far.pose, K, cfg)
    rgb_near, depth_near, acc_near = _render_at(splats, table, near.time, near.pose, K, cfg)
    rgb_t0, _, _ = _render_at(splats, table, 0.0, Pose.identity(), K, cfg)

    l_rgb = loss_rgb(far.image, rgb_far, near.image, rgb_near, w.lambda1)
    mask_far = (acc_far > cfg.alpha_floor) & (far.depth > 0)
    mask_near = (acc_near > cfg.alpha_floor) & (near.depth > 0)
    l_depth = loss_depth(far.depth, depth_far, near.depth, depth_near,
                         w.lambda2, w.depth_clamp, mask_far, mask_near)
    l_diff = loss_rgb_diff(far.image, problem.input_image, rgb_far, rgb_t0)
    l_kl = _velocity_prior_kl(table, problem.velocity_prior_scale)
    loss = total_loss(l_rgb, l_depth, l_diff, l_kl, w)
    renders = {"far": (rgb_far, depth_far, acc_far), "near": (rgb_near, depth_near, acc_near)}
    return loss, table, renders


def _final_metrics(renders, problem: FitProblem) -> dict:
    out = {}
    for name, target in (("far", problem.target_far), ("near", problem.target_near)):
        rgb, depth, acc = (t.detach() for t in renders[name])
        valid = (acc > problem.render_config.alpha_floor) & (target.depth > 0)
        out[name] = metrics(target.image, rgb, target.depth, depth,
                            problem.weights.depth_clamp, valid)
        out[name]["time"] = target.time
    return out


def fit(problem: FitProblem):
    """Optimize raw splat maps against the two supervised frames.

    Returns (best SplatMap, its MotionTable, FitReport). Deterministic for a
    fixed seed, independent of the host's thread configuration.
    """
    n_threads = torch.get_num_threads()
    torch.set_num_threads(1)  # keeps reductions bitwise-reproducible
    try:
        return _fit_inner(problem)
    finally:
        torch.set_num_threads(n_threads)


def _fit_inner(problem: FitProblem):
    torch.manual_seed(problem.seed)
    t0 = _time.monotonic()
    K = problem.intrinsics

    init = init_splat_map(problem.input_image, problem.input_depth, problem.mask,
                          K, problem.layers)
    if problem.iterations <= 0:
        splats = decode(init, K)
        table = {k: _detach_motion(v) for k, v in aggregate(splats).items()}
        report = FitReport([], 0, float("nan"), {}, _time.monotonic() - t0)
        return init, table, report

    params = {name: ch.clone().requires_grad_(True) for name, ch in init.float_channels().items()
              if name != "base_depth"}
    lr = problem.learning_rates
    groups = [
        {"params": [params["depth_offset"], params["xy_offset"]], "lr": lr.position},
        {"params": [params["color"]], "lr": lr.color},
        {"params": [params["opacity_raw"]], "lr": lr.opacity},
        {"params": [params["log_scale"], params["rotation"]], "lr": lr.log_scale},
        {"params": [params["velocity"], params["acceleration"]], "lr": lr.motion},
    ]
    opt = torch.optim.Adam(groups)
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda i: 0.5 * (1.0 + math.cos(math.pi * i / problem.iterations))
    )

    def current_map() -> SplatMap:
        return replace(init, base_depth=init.base_depth, object_id=init.object_id, **params)

    trace: list[float] = []
    best_loss = math.inf
    best_state = None
    best_iter = -1
    for it in range(problem.iterations):
        opt.zero_grad()
        loss, _, renders = _objective(current_map(), problem)
        value = float(loss.detach())
        if math.isnan(value):
            raise FitError(_nan_diagnostic(params, loss))
        trace.append(value)
        if value < best_loss:
            best_loss = value
            best_iter = it
            best_state = {k: v.detach().clone() for k, v in params.items()}
        loss.backward()
        for name, p in params.items():
            if p.grad is not None and not bool(torch.isfinite(p.grad).all()):
                raise FitError(f"non-finite gradient in channel {name} at iteration {it}")
        opt.step()
        sched.step()

    best_map = replace(init, base_depth=init.base_depth, object_id=init.object_id, **best_state)
    splats = decode(best_map, K)
    table = {k: _detach_motion(v) for k, v in aggregate(splats).items()}
    with torch.no_grad():
        _, _, renders = _objective(best_map, problem)
    report = FitReport(trace, best_iter, best_loss, _final_metrics(renders, problem),
                       _time.monotonic() - t0)
    return best_map, table, report


def _detach_motion(m: ObjectMotion) -> ObjectMotion:
    return ObjectMotion(m.object_id, m.v_lin.detach().clone(), m.a_lin.detach().clone(),
                        m.omega.detach().clone(), m.alpha.detach().clone(),
                        m.centroid.detach().clone())


def _nan_diagnostic(params, loss) -> str:
    try:
        loss.backward()
        for name, p in params.items():
            if p.grad is not None and not bool(torch.isfinite(p.grad).all()):
                return f"loss became NaN; first non-finite gradient in channel {name}"
    except RuntimeError:
        pass
    return "loss became NaN"


def sample_motion(table: MotionTable, prior_scale, seed: int) -> MotionTable:
    """Seed-deterministic Gaussian perturbation of each dynamic object's linear
    and angular velocity; the static entry is untouched."""
    scale = torch.as_tensor(prior_scale, dtype=DTYPE)
    if bool(torch.any(scale < 0)):
        raise FitError("prior_scale must be nonnegative")
    gen = torch.Generator().manual_seed(seed)
    out: MotionTable = {}
    for oid in sorted(table):
        m = table[oid]
        if oid == STATIC_ID:
            out[oid] = m
            continue
        dv = torch.randn(3, generator=gen, dtype=DTYPE) * scale
        dw = torch.randn(3, generator=gen, dtype=DTYPE) * scale
        out[oid] = ObjectMotion(oid, m.v_lin + dv, m.a_lin, m.omega + dw, m.alpha, m.centroid)
    return out
