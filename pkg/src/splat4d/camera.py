"""Pinhole camera model, rigid poses and quaternion helpers.

Coordinate convention (used everywhere in this package, including file
formats and the viewer protocol): right-handed, +x right, +y down,
+z forward; depth is view-space z. Quaternions are stored (w, x, y, z).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

DTYPE = torch.float64


class CameraError(ValueError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise CameraError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise CameraError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics for the same view rendered at `factor` times the resolution."""
        return CameraIntrinsics(
            fx=self.fx * factor,
            fy=self.fy * factor,
            cx=(self.cx + 0.5) * factor - 0.5,
            cy=(self.cy + 0.5) * factor - 0.5,
            width=max(1, int(round(self.width * factor))),
            height=max(1, int(round(self.height * factor))),
        )


def quat_normalize(q: torch.Tensor) -> torch.Tensor:
    return q / torch.linalg.norm(q, dim=-1, keepdim=True)


def quat_multiply(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Hamilton product a*b, both (..., 4) in (w, x, y, z) order."""
    aw, ax, ay, az = a.unbind(-1)
    bw, bx, by, bz = b.unbind(-1)
    return torch.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        dim=-1,
    )


def quat_conjugate(q: torch.Tensor) -> torch.Tensor:
    return q * torch.tensor([1.0, -1.0, -1.0, -1.0], dtype=q.dtype)


def quat_to_matrix(q: torch.Tensor) -> torch.Tensor:
    """Rotation matrices (..., 3, 3) from unit quaternions (..., 4)."""
    w, x, y, z = q.unbind(-1)
    row0 = torch.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1)
    row1 = torch.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1)
    row2 = torch.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1)
    return torch.stack([row0, row1, row2], dim=-2)


def axis_angle_to_quat(theta: torch.Tensor) -> torch.Tensor:
    """Exponential map: rotation vector (..., 3) -> unit quaternion (..., 4).

    Uses a series expansion of sin(|θ|/2)/|θ| near zero so the map is smooth
    (and differentiable) through θ = 0.
    """
    angle = torch.linalg.norm(theta, dim=-1, keepdim=True)
    half = 0.5 * angle
    small = angle < 1e-8
    # sin(half)/angle, guarded at 0 where the limit is 1/2
    sinc_half = torch.where(small, 0.5 - angle * angle / 48.0, torch.sin(half) / torch.where(small, torch.ones_like(angle), angle))
    w = torch.cos(half)
    xyz = theta * sinc_half
    return torch.cat([w, xyz], dim=-1)


def quat_slerp(q0: torch.Tensor, q1: torch.Tensor, u: float) -> torch.Tensor:
    """Spherical linear interpolation between two unit quaternions."""
    q0 = quat_normalize(q0)
    q1 = quat_normalize(q1)
    dot = torch.dot(q0, q1)
    if dot < 0:
        q1 = -q1
        dot = -dot
    if dot > 1 - 1e-12:
        return quat_normalize(q0 + u * (q1 - q0))
    omega = torch.acos(torch.clamp(dot, -1.0, 1.0))
    so = torch.sin(omega)
    return (torch.sin((1 - u) * omega) / so) * q0 + (torch.sin(u * omega) / so) * q1


@dataclass(frozen=True)
class Pose:
    """Camera-from-world rigid transform: p_cam = R p_world + t."""

    rotation: torch.Tensor  # (4,) unit quaternion (w, x, y, z)
    translation: torch.Tensor  # (3,) meters

    def __post_init__(self):
        q = torch.as_tensor(self.rotation, dtype=DTYPE)
        t = torch.as_tensor(self.translation, dtype=DTYPE)
        if q.shape != (4,) or t.shape != (3,):
            raise CameraError(f"bad pose shapes {tuple(q.shape)}, {tuple(t.shape)}")
        n = float(torch.linalg.norm(q))
        if abs(n - 1.0) > 1e-6:
            raise CameraError(f"quaternion norm {n} too far from 1")
        object.__setattr__(self, "rotation", quat_normalize(q))
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(torch.tensor([1.0, 0, 0, 0], dtype=DTYPE), torch.zeros(3, dtype=DTYPE))

    def matrix(self) -> torch.Tensor:
        return quat_to_matrix(self.rotation)

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply `other` first."""
        q = quat_normalize(quat_multiply(self.rotation, other.rotation))
        t = self.matrix() @ other.translation + self.translation
        return Pose(q, t)

    def inverse(self) -> "Pose":
        q = quat_conjugate(self.rotation)
        return Pose(quat_normalize(q), -(quat_to_matrix(q) @ self.translation))


def transform_point(p: torch.Tensor, pose: Pose) -> torch.Tensor:
    """Apply a camera-from-world pose to points (..., 3)."""
    return p @ pose.matrix().T + pose.translation


def unproject(u, delta, d, K: CameraIntrinsics) -> torch.Tensor:
    """Lift pixel coordinates (+ sub-pixel offset) at depth d to a view-space point.

    u, delta: (..., 2) pixel coordinates / offsets; d: (...,) depth in meters.
    Pixel coordinates are taken relative to the principal point.
    """
    u = torch.as_tensor(u, dtype=DTYPE)
    delta = torch.as_tensor(delta, dtype=DTYPE)
    d = torch.as_tensor(d, dtype=DTYPE)
    if not bool(torch.all(d > 0)):
        raise CameraError("unproject requires positive depth")
    ux = u[..., 0] - K.cx + delta[..., 0]
    uy = u[..., 1] - K.cy + delta[..., 1]
    return torch.stack([ux * d / K.fx, uy * d / K.fy, d], dim=-1)


def project(p: torch.Tensor, K: CameraIntrinsics):
    """View-space points (..., 3) -> (pixel coordinates (..., 2), depth (...,), in_front (...,)).

    Points with z <= 0 are flagged for culling rather than raising.
    """
    p = torch.as_tensor(p, dtype=DTYPE)
    z = p[..., 2]
    in_front = z > 0
    zs = torch.where(in_front, z, torch.ones_like(z))
    u = torch.stack([K.fx * p[..., 0] / zs + K.cx, K.fy * p[..., 1] / zs + K.cy], dim=-1)
    return u, z, in_front
