"""Shared test utilities: an independent brute-force rasterizer oracle written
against numpy/scipy, random scene generators, and finite-difference helpers.

The oracle deliberately shares no code with the engine: quaternions go through
scipy, projection/compositing are straight per-pixel loops over every splat
with an exact (depth, index) sort and no tiling.
"""

from __future__ import annotations

import numpy as np
import torch
from scipy.spatial.transform import Rotation

from splat4d import CameraIntrinsics, Pose, SplatSet
from splat4d.camera import DTYPE


def oracle_render(splats: SplatSet, pose: Pose, K: CameraIntrinsics,
                  dilation: float = 0.3, alpha_floor: float = 1e-3,
                  far_sentinel: float = 1e4, t_eps: float = 1e-4,
                  a_max: float = 1.0 - 1e-4):
    """Brute-force per-pixel reference renderer. Returns (rgb, depth, alpha)
    numpy arrays of shape (H, W, 3), (H, W), (H, W)."""
    H, W = K.height, K.width
    means = splats.means.detach().numpy()
    quats = splats.rotations.detach().numpy()  # (w, x, y, z)
    scales = splats.scales.detach().numpy()
    ops = splats.opacities.detach().numpy()
    colors = (splats.colors.detach().numpy() + 1.0) * 0.5

    Rc = pose.matrix().numpy()
    tc = pose.translation.numpy()

    entries = []  # (z, index, center, inv_cov, opacity, color)
    for i in range(means.shape[0]):
        p = Rc @ means[i] + tc
        z = p[2]
        if z <= 0:
            continue
        u = np.array([K.fx * p[0] / z + K.cx, K.fy * p[1] / z + K.cy])
        # scipy expects (x, y, z, w)
        Rq = Rotation.from_quat([quats[i, 1], quats[i, 2], quats[i, 3], quats[i, 0]]).as_matrix()
        sigma = Rq @ np.diag(scales[i] ** 2) @ Rq.T
        sigma_cam = Rc @ sigma @ Rc.T
        J = np.array([
            [K.fx / z, 0.0, -K.fx * p[0] / z ** 2],
            [0.0, K.fy / z, -K.fy * p[1] / z ** 2],
        ])
        sigma2d = J @ sigma_cam @ J.T + dilation * np.eye(2)
        det = np.linalg.det(sigma2d)
        if not np.isfinite(det) or det <= 1e-12:
            continue
        entries.append((z, i, u, np.linalg.inv(sigma2d), ops[i], colors[i]))

    entries.sort(key=lambda e: (e[0], e[1]))

    rgb = np.zeros((H, W, 3))
    depth_num = np.zeros((H, W))
    acc = np.zeros((H, W))
    for py in range(H):
        for px in range(W):
            trans = 1.0
            for z, _, u, inv_cov, op, col in entries:
                if trans <= t_eps:
                    break
                d = np.array([px, py], dtype=float) - u
                a = op * np.exp(-0.5 * d @ inv_cov @ d)
                a = min(a, a_max)
                w = a * trans
                rgb[py, px] += w * col
                depth_num[py, px] += w * z
                acc[py, px] += w
                trans *= 1.0 - a
    covered = acc > alpha_floor
    depth = np.where(covered, depth_num / np.maximum(acc, alpha_floor), far_sentinel)
    return rgb, depth, acc


def random_splat_set(gen: torch.Generator, n: int, K: CameraIntrinsics,
                     z_range=(2.0, 8.0), opacity_range=(0.2, 0.95),
                     scale_range=(0.03, 0.25)) -> SplatSet:
    """Random scene whose splats sit inside the view frustum of the identity
    pose, with footprints a few pixels across."""

    def uniform(*shape, lo=0.0, hi=1.0):
        return torch.rand(*shape, generator=gen, dtype=DTYPE) * (hi - lo) + lo

    z = uniform(n, lo=z_range[0], hi=z_range[1])
    # keep centers within the central ~80% of the image
    u = uniform(n, lo=0.1 * K.width, hi=0.9 * K.width)
    v = uniform(n, lo=0.1 * K.height, hi=0.9 * K.height)
    x = (u - K.cx) / K.fx * z
    y = (v - K.cy) / K.fy * z
    means = torch.stack([x, y, z], dim=-1)

    quats = torch.randn(n, 4, generator=gen, dtype=DTYPE)
    quats = quats / quats.norm(dim=-1, keepdim=True)
    scales = uniform(n, 3, lo=scale_range[0], hi=scale_range[1])
    opacities = uniform(n, lo=opacity_range[0], hi=opacity_range[1])
    colors = uniform(n, 3, lo=-1.0, hi=1.0)
    return SplatSet(
        means=means, rotations=quats, scales=scales, opacities=opacities,
        colors=colors,
        velocities=torch.zeros(n, 3, dtype=DTYPE),
        accelerations=torch.zeros(n, 3, dtype=DTYPE),
        object_ids=torch.zeros(n, dtype=torch.int64),
        intrinsics=K,
    )


def small_intrinsics(size: int = 32, f: float = 40.0) -> CameraIntrinsics:
    c = (size - 1) / 2
    return CameraIntrinsics(fx=f, fy=f, cx=c, cy=c, width=size, height=size)


def render_cotangents(gen: torch.Generator, out, alpha_min: float = 0.05):
    """Random upstream gradients for a rendered frame. The depth cotangent is
    zeroed wherever accumulated alpha is near the validity floor, because the
    depth output switches to the far sentinel there (a step the depth losses
    mask out as well)."""
    H, W = out.depth.shape
    cot_rgb = torch.randn(H, W, 3, generator=gen, dtype=DTYPE)
    cot_depth = torch.randn(H, W, generator=gen, dtype=DTYPE)
    cot_depth = cot_depth * (out.alpha > alpha_min).to(DTYPE)
    return cot_rgb, cot_depth


def fd_gradient(scalar_fn, tensor: torch.Tensor, h: float = 1e-4) -> torch.Tensor:
    """Central finite differences of a scalar function of one tensor."""
    g = torch.zeros_like(tensor)
    flat = tensor.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        hi = scalar_fn(tensor)
        flat[i] = orig - h
        lo = scalar_fn(tensor)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * h)
    return g


def grad_close(analytic: torch.Tensor, fd: torch.Tensor, rel_tol: float = 1e-2,
               grad_floor: float = 1e-6) -> bool:
    """Relative comparison where the reference gradient is meaningfully nonzero."""
    a = analytic.reshape(-1)
    f = fd.reshape(-1)
    mask = f.abs() > grad_floor
    if not bool(mask.any()):
        return True
    rel = (a[mask] - f[mask]).abs() / f[mask].abs()
    return bool((rel < rel_tol).all())


def rigid_ring_splats(gen: torch.Generator, K: CameraIntrinsics,
                      v0: torch.Tensor, omega: torch.Tensor,
                      centroid: torch.Tensor, n_points: int = 12,
                      radius: float = 0.5, object_id: int = 1) -> SplatSet:
    """Splats on rings perpendicular to omega, carrying the exact rigid field
    v_i = v0 + omega x p_i about the centroid. On such supports the per-splat
    angular-rate estimate is exact, so aggregation must recover (v0, omega)."""
    w = omega / omega.norm()
    # orthonormal frame perpendicular to omega
    a = torch.tensor([1.0, 0.0, 0.0], dtype=DTYPE)
    if float(torch.abs(w @ a)) > 0.9:
        a = torch.tensor([0.0, 1.0, 0.0], dtype=DTYPE)
    e1 = a - (a @ w) * w
    e1 = e1 / e1.norm()
    e2 = torch.cross(w, e1, dim=0)

    angles = torch.arange(n_points, dtype=DTYPE) * (2 * torch.pi / n_points)
    rel = radius * (torch.cos(angles).unsqueeze(-1) * e1 + torch.sin(angles).unsqueeze(-1) * e2)
    means = centroid + rel
    vel = v0 + torch.cross(omega.expand_as(rel), rel, dim=-1)

    n = n_points
    quats = torch.zeros(n, 4, dtype=DTYPE)
    quats[:, 0] = 1.0
    return SplatSet(
        means=means, rotations=quats,
        scales=torch.full((n, 3), 0.05, dtype=DTYPE),
        opacities=torch.full((n,), 0.8, dtype=DTYPE),
        colors=torch.zeros(n, 3, dtype=DTYPE),
        velocities=vel,
        accelerations=torch.zeros(n, 3, dtype=DTYPE),
        object_ids=torch.full((n,), object_id, dtype=torch.int64),
        intrinsics=K,
    )
