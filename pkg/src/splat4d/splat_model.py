"""Pixel-aligned raw splat parameter maps and their decoding into world-space splats."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import torch

from .camera import DTYPE, CameraIntrinsics, quat_normalize, quat_to_matrix, unproject

DEFAULT_LAYERS = 5  # splats per pixel

STATIC_ID = 0


class DecodeError(ValueError):
    pass


@dataclass
class SplatMap:
    """Raw (pre-activation) parameter maps, one splat per pixel per layer.

    Shapes: base_depth (H, W); object_id (H, W) int; everything else leads
    with (N, H, W). Colors are stored in [-1, 1]; scale is log-space meters;
    opacity is pre-sigmoid; velocities m/s and accelerations m/s^2 are
    view-space of the input frame.
    """

    base_depth: torch.Tensor        # (H, W), meters, > 0
    depth_offset: torch.Tensor      # (N, H, W), meters, signed
    xy_offset: torch.Tensor         # (N, H, W, 2), pixels
    rotation: torch.Tensor          # (N, H, W, 4), raw quaternion
    log_scale: torch.Tensor         # (N, H, W, 3)
    opacity_raw: torch.Tensor       # (N, H, W)
    color: torch.Tensor             # (N, H, W, 3), in [-1, 1]
    velocity: torch.Tensor          # (N, H, W, 3)
    acceleration: torch.Tensor      # (N, H, W, 3)
    object_id: torch.Tensor         # (H, W), int64, 0 = static background

    def __post_init__(self):
        H, W = self.base_depth.shape
        N = self.depth_offset.shape[0]
        expected = {
            "depth_offset": (N, H, W),
            "xy_offset": (N, H, W, 2),
            "rotation": (N, H, W, 4),
            "log_scale": (N, H, W, 3),
            "opacity_raw": (N, H, W),
            "color": (N, H, W, 3),
            "velocity": (N, H, W, 3),
            "acceleration": (N, H, W, 3),
            "object_id": (H, W),
        }
        for name, shape in expected.items():
            got = tuple(getattr(self, name).shape)
            if got != shape:
                raise DecodeError(f"{name} has shape {got}, expected {shape}")
        if not bool(torch.all(self.base_depth > 0)):
            raise DecodeError("base_depth must be positive everywhere")

    @property
    def height(self) -> int:
        return self.base_depth.shape[0]

    @property
    def width(self) -> int:
        return self.base_depth.shape[1]

    @property
    def layers(self) -> int:
        return self.depth_offset.shape[0]

    def float_channels(self) -> dict[str, torch.Tensor]:
        return {
            "base_depth": self.base_depth,
            "depth_offset": self.depth_offset,
            "xy_offset": self.xy_offset,
            "rotation": self.rotation,
            "log_scale": self.log_scale,
            "opacity_raw": self.opacity_raw,
            "color": self.color,
            "velocity": self.velocity,
            "acceleration": self.acceleration,
        }

    def to(self, dtype: torch.dtype) -> "SplatMap":
        kw = {k: v.to(dtype) for k, v in self.float_channels().items()}
        return replace(self, object_id=self.object_id, **kw)

    def clone(self) -> "SplatMap":
        kw = {k: v.clone() for k, v in self.float_channels().items()}
        return replace(self, object_id=self.object_id.clone(), **kw)


def zeros_splat_map(height: int, width: int, layers: int = DEFAULT_LAYERS,
                    base_depth: torch.Tensor | None = None,
                    dtype: torch.dtype = DTYPE) -> SplatMap:
    """All-zero raw maps over a given (or unit) base depth."""
    N, H, W = layers, height, width
    if base_depth is None:
        base_depth = torch.ones(H, W, dtype=dtype)
    return SplatMap(
        base_depth=base_depth.to(dtype),
        depth_offset=torch.zeros(N, H, W, dtype=dtype),
        xy_offset=torch.zeros(N, H, W, 2, dtype=dtype),
        rotation=torch.cat(
            [torch.ones(N, H, W, 1, dtype=dtype), torch.zeros(N, H, W, 3, dtype=dtype)], -1
        ),
        log_scale=torch.zeros(N, H, W, 3, dtype=dtype),
        opacity_raw=torch.zeros(N, H, W, dtype=dtype),
        color=torch.zeros(N, H, W, 3, dtype=dtype),
        velocity=torch.zeros(N, H, W, 3, dtype=dtype),
        acceleration=torch.zeros(N, H, W, 3, dtype=dtype),
        object_id=torch.zeros(H, W, dtype=torch.int64),
    )


@dataclass
class SplatSet:
    """Decoded splats as flat per-splat arrays, ordered row-major by pixel then layer.

    means are in the view space of the input frame; scale is post-exp meters;
    opacity in (0, 1]; colors stay in [-1, 1] until rasterization.
    """

    means: torch.Tensor        # (M, 3)
    rotations: torch.Tensor    # (M, 4), unit
    scales: torch.Tensor       # (M, 3), > 0
    opacities: torch.Tensor    # (M,)
    colors: torch.Tensor       # (M, 3)
    velocities: torch.Tensor   # (M, 3)
    accelerations: torch.Tensor  # (M, 3)
    object_ids: torch.Tensor   # (M,), int64
    intrinsics: CameraIntrinsics

    def __len__(self) -> int:
        return self.means.shape[0]

    def clone(self) -> "SplatSet":
        return SplatSet(
            self.means.clone(), self.rotations.clone(), self.scales.clone(),
            self.opacities.clone(), self.colors.clone(), self.velocities.clone(),
            self.accelerations.clone(), self.object_ids.clone(), self.intrinsics,
        )

    def permuted(self, order: torch.Tensor) -> "SplatSet":
        return SplatSet(
            self.means[order], self.rotations[order], self.scales[order],
            self.opacities[order], self.colors[order], self.velocities[order],
            self.accelerations[order], self.object_ids[order], self.intrinsics,
        )


def decode(smap: SplatMap, K: CameraIntrinsics) -> SplatSet:
    """Activate and unproject a SplatMap into a flat SplatSet.

    Per pixel, layer i sits at depth d_i = base_depth + sum_{k<=i} depth_offset_k;
    the mean is the unprojection of the pixel (plus its xy offset) at d_i.
    Differentiable with respect to all float channels.
    """
    for name, ch in smap.float_channels().items():
        if bool(torch.any(torch.isnan(ch))):
            raise DecodeError(f"NaN in raw channel {name}")
    N, H, W = smap.layers, smap.height, smap.width
    if (K.width, K.height) != (W, H):
        raise DecodeError(f"intrinsics {K.width}x{K.height} do not match map {W}x{H}")

    depths = smap.base_depth.unsqueeze(0) + torch.cumsum(smap.depth_offset, dim=0)  # (N, H, W)
    if not bool(torch.all(depths > 0)):
        bad = (depths <= 0).nonzero()[0]
        i, r, c = (int(v) for v in bad)
        raise DecodeError(f"non-positive cumulative depth at pixel ({r}, {c}) layer {i}")

    ys, xs = torch.meshgrid(
        torch.arange(H, dtype=depths.dtype), torch.arange(W, dtype=depths.dtype), indexing="ij"
    )
    u = torch.stack([xs, ys], dim=-1).expand(N, H, W, 2)
    means = unproject(u, smap.xy_offset, depths, K)  # (N, H, W, 3)

    # pixel-major, then layer: index = (r*W + c)*N + layer
    def flat(x):
        return x.permute(1, 2, 0, *range(3, x.dim())).reshape(H * W * N, *x.shape[3:])

    return SplatSet(
        means=flat(means),
        rotations=quat_normalize(flat(smap.rotation)),
        scales=torch.exp(flat(smap.log_scale)),
        opacities=torch.sigmoid(flat(smap.opacity_raw)),
        colors=flat(smap.color),
        velocities=flat(smap.velocity),
        accelerations=flat(smap.acceleration),
        object_ids=smap.object_id.reshape(H * W).repeat_interleave(N),
        intrinsics=K,
    )


def covariance(rotation: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    """3x3 covariance R diag(scale)^2 R^T from unit quaternions (..., 4) and scales (..., 3)."""
    R = quat_to_matrix(quat_normalize(rotation))
    S2 = torch.diag_embed(scale * scale)
    return R @ S2 @ R.transpose(-1, -2)
