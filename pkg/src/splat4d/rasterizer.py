"""Tile-based software rasterizer for 3D Gaussians.

Projects splats through a camera pose, maps covariances to screen space via
the perspective Jacobian, and alpha-composites front-to-back per 16x16 tile
into RGB + expected-depth + accumulated alpha. The whole forward pass is
built from differentiable tensor ops, so reverse-mode gradients with respect
to all splat parameters are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from ._compositing import CompositeImage
from .camera import CameraIntrinsics, Pose
from .splat_model import SplatSet, covariance


@dataclass(frozen=True)
class RenderConfig:
    tile_size: int = 16
    dilation: float = 0.3          # px^2 added to the 2D covariance diagonal
    alpha_floor: float = 1e-3      # below this accumulated alpha, depth is sentinel
    far_sentinel: float = 1e4      # meters, reported depth for empty pixels
    transmittance_eps: float = 1e-4  # front-to-back early-out
    alpha_clamp: float = 1.0 - 1e-4  # keeps transmittance strictly positive
    footprint_alpha_eps: float = 1e-5  # per-splat contribution below this may be tile-culled


DEFAULT_CONFIG = RenderConfig()


@dataclass
class RenderOutput:
    rgb: torch.Tensor    # (H, W, 3) in [0, 1]
    depth: torch.Tensor  # (H, W) meters (far_sentinel where alpha <= alpha_floor)
    alpha: torch.Tensor  # (H, W) in [0, 1]
    skipped_splats: int = 0  # degenerate 2D covariance after dilation


@dataclass
class RenderGradients:
    """Partials of a scalar loss with respect to splat parameters (input order)."""

    d_means: torch.Tensor       # (M, 3)
    d_rotations: torch.Tensor   # (M, 4)
    d_scales: torch.Tensor      # (M, 3)
    d_opacities: torch.Tensor   # (M,)
    d_colors: torch.Tensor      # (M, 3)


def _project_splats(splats: SplatSet, pose: Pose, K: CameraIntrinsics, cfg: RenderConfig):
    """Per-splat screen-space quantities: center, depth, inverse 2D covariance,
    footprint radius, and a validity mask. Returns (centers, z, conic, radius,
    valid, n_skipped)."""
    dtype = splats.means.dtype
    R = pose.matrix().to(dtype)
    t = pose.translation.to(dtype)
    q = splats.means @ R.T + t
    z = q[..., 2]
    in_front = z > 0
    zs = torch.where(in_front, z, torch.ones_like(z))

    ux = K.fx * q[..., 0] / zs + K.cx
    uy = K.fy * q[..., 1] / zs + K.cy
    centers = torch.stack([ux, uy], dim=-1)

    sigma_world = covariance(splats.rotations, splats.scales)
    sigma_cam = R @ sigma_world @ R.T

    # perspective Jacobian of (u, v) wrt the view-space point
    zero = torch.zeros_like(zs)
    J = torch.stack(
        [
            torch.stack([K.fx / zs, zero, -K.fx * q[..., 0] / (zs * zs)], -1),
            torch.stack([zero, K.fy / zs, -K.fy * q[..., 1] / (zs * zs)], -1),
        ],
        dim=-2,
    )  # (M, 2, 3)
    sigma2d = J @ sigma_cam @ J.transpose(-1, -2)
    sigma2d = sigma2d + cfg.dilation * torch.eye(2, dtype=dtype)

    a = sigma2d[..., 0, 0]
    b = sigma2d[..., 0, 1]
    c = sigma2d[..., 1, 1]
    det = a * c - b * b
    finite = torch.isfinite(det) & torch.isfinite(a) & torch.isfinite(c) & torch.isfinite(b)
    invertible = finite & (det > 1e-12)
    n_skipped = int((in_front & ~invertible).sum())

    det_safe = torch.where(invertible, det, torch.ones_like(det))
    conic = torch.stack([c / det_safe, -b / det_safe, a / det_safe], dim=-1)  # (A, B, C)

    # footprint radius: large enough that truncated contributions stay below
    # footprint_alpha_eps, never tighter than 3 sigma
    lam_max = 0.5 * (a + c) + torch.sqrt(torch.clamp(0.25 * (a - c) ** 2 + b * b, min=0.0))
    op = torch.clamp(splats.opacities.detach(), min=1e-12)
    k = torch.sqrt(torch.clamp(2.0 * torch.log(op / cfg.footprint_alpha_eps), min=9.0))
    radius = k * torch.sqrt(torch.clamp(lam_max, min=0.0))

    valid = in_front & invertible
    return centers, z, conic, radius, valid, n_skipped


def _bin_tiles(centers: torch.Tensor, radius: torch.Tensor, idx: torch.Tensor,
               z: torch.Tensor, H: int, W: int, ts: int):
    """Per-tile depth-sorted candidate lists as one flat index array.

    Returns (cand, offsets, tiles) with tiles rows (x0, y0, w, h); candidate
    order within a tile is view depth with splat-index tiebreak."""
    lo = centers[idx] - radius[idx].unsqueeze(-1)
    hi = centers[idx] + radius[idx].unsqueeze(-1)
    chunks = []
    offsets = [0]
    tiles = []
    for ty in range(0, H, ts):
        for tx in range(0, W, ts):
            th = min(ts, H - ty)
            tw = min(ts, W - tx)
            # conservative bbox-vs-tile overlap (pixel centers at integer coords)
            hit = (
                (lo[:, 0] <= tx + tw - 1) & (hi[:, 0] >= tx)
                & (lo[:, 1] <= ty + th - 1) & (hi[:, 1] >= ty)
            )
            cand = idx[hit]
            if cand.numel():
                # stable sort: candidate list is index-ascending already
                cand = cand[torch.argsort(z[cand].detach(), stable=True)]
                chunks.append(cand)
            tiles.append((tx, ty, tw, th))
            offsets.append(offsets[-1] + cand.numel())
    flat = torch.cat(chunks) if chunks else torch.zeros(0, dtype=torch.int64)
    return flat, torch.tensor(offsets, dtype=torch.int64), torch.tensor(tiles, dtype=torch.int64)


def _render_tensors(splats: SplatSet, pose: Pose, K: CameraIntrinsics, cfg: RenderConfig):
    dtype = splats.means.dtype
    H, W = K.height, K.width

    if len(splats) == 0:
        rgb = torch.zeros(H, W, 3, dtype=dtype)
        acc = torch.zeros(H, W, dtype=dtype)
        depth = torch.full((H, W), cfg.far_sentinel, dtype=dtype)
        return rgb, depth, acc, 0

    centers, z, conic, radius, valid, n_skipped = _project_splats(splats, pose, K, cfg)
    colors01 = (splats.colors + 1.0) * 0.5

    idx = valid.nonzero(as_tuple=True)[0]
    if idx.numel() == 0:
        rgb = torch.zeros(H, W, 3, dtype=dtype)
        acc = torch.zeros(H, W, dtype=dtype)
        depth = torch.full((H, W), cfg.far_sentinel, dtype=dtype)
        return rgb, depth, acc, n_skipped

    cand, offsets, tiles = _bin_tiles(centers.detach(), radius, idx, z, H, W, cfg.tile_size)
    rgb, depth_num, acc = CompositeImage.apply(
        centers.to(torch.float64), conic.to(torch.float64), z.to(torch.float64),
        splats.opacities.to(torch.float64), colors01.to(torch.float64),
        cand, offsets, tiles, H, W, cfg.alpha_clamp, cfg.transmittance_eps,
    )
    covered = acc > cfg.alpha_floor
    depth = torch.where(
        covered,
        depth_num / torch.clamp(acc, min=cfg.alpha_floor),
        torch.full_like(acc, cfg.far_sentinel),
    )
    return rgb, depth, acc, n_skipped


def render(splats: SplatSet, pose: Pose, K: CameraIntrinsics,
           cfg: RenderConfig = DEFAULT_CONFIG) -> RenderOutput:
    """Render a SplatSet from a camera pose into RGB + depth + alpha."""
    rgb, depth, acc, n_skipped = _render_tensors(splats, pose, K, cfg)
    return RenderOutput(rgb=rgb.detach(), depth=depth.detach(), alpha=acc.detach(),
                        skipped_splats=n_skipped)


def render_for_grad(splats: SplatSet, pose: Pose, K: CameraIntrinsics,
                    cfg: RenderConfig = DEFAULT_CONFIG):
    """Like render but keeps the autograd graph; returns (rgb, depth, alpha) tensors."""
    rgb, depth, acc, _ = _render_tensors(splats, pose, K, cfg)
    return rgb, depth, acc


def render_with_gradients(splats: SplatSet, pose: Pose, K: CameraIntrinsics,
                          d_loss_d_rgb: torch.Tensor, d_loss_d_depth: torch.Tensor,
                          cfg: RenderConfig = DEFAULT_CONFIG):
    """Render and return partials of loss = <d_loss_d_rgb, rgb> + <d_loss_d_depth, depth>
    with respect to every splat's mean, rotation, scale, opacity and color.
    Culled splats get exactly zero gradients."""
    d_loss_d_rgb = torch.as_tensor(d_loss_d_rgb, dtype=splats.means.dtype)
    d_loss_d_depth = torch.as_tensor(d_loss_d_depth, dtype=splats.means.dtype)
    if d_loss_d_rgb.shape != (K.height, K.width, 3) or d_loss_d_depth.shape != (K.height, K.width):
        raise ValueError("upstream gradient shapes do not match the image size")
    if not (bool(torch.isfinite(d_loss_d_rgb).all()) and bool(torch.isfinite(d_loss_d_depth).all())):
        raise ValueError("upstream gradients must be finite")

    leaves = {
        "means": splats.means.detach().clone().requires_grad_(True),
        "rotations": splats.rotations.detach().clone().requires_grad_(True),
        "scales": splats.scales.detach().clone().requires_grad_(True),
        "opacities": splats.opacities.detach().clone().requires_grad_(True),
        "colors": splats.colors.detach().clone().requires_grad_(True),
    }
    live = SplatSet(
        means=leaves["means"], rotations=leaves["rotations"], scales=leaves["scales"],
        opacities=leaves["opacities"], colors=leaves["colors"],
        velocities=splats.velocities, accelerations=splats.accelerations,
        object_ids=splats.object_ids, intrinsics=splats.intrinsics,
    )
    rgb, depth, acc, n_skipped = _render_tensors(live, pose, K, cfg)
    scalar = (rgb * d_loss_d_rgb).sum() + (depth * d_loss_d_depth).sum()
    grads = torch.autograd.grad(
        scalar, list(leaves.values()), allow_unused=True, materialize_grads=True
    )
    out = RenderOutput(rgb=rgb.detach(), depth=depth.detach(), alpha=acc.detach(),
                       skipped_splats=n_skipped)
    g = RenderGradients(*grads)
    return out, g
