"""Per-object rigid motion: aggregation from per-splat velocities and forward propagation."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .camera import DTYPE, axis_angle_to_quat, quat_multiply, quat_normalize, quat_to_matrix
from .splat_model import STATIC_ID, SplatSet

# splats closer than this to the centroid are excluded from angular averaging
CENTROID_EPS = 1e-6


class MotionError(ValueError):
    pass


@dataclass
class ObjectMotion:
    """Rigid motion of one object about its centroid.

    v_lin/a_lin are linear velocity/acceleration (m/s, m/s^2); omega/alpha
    are angular velocity/acceleration as rotation vectors (rad/s, rad/s^2)
    about the centroid.
    """

    object_id: int
    v_lin: torch.Tensor    # (3,)
    a_lin: torch.Tensor    # (3,)
    omega: torch.Tensor    # (3,)
    alpha: torch.Tensor    # (3,)
    centroid: torch.Tensor  # (3,)

    @staticmethod
    def static(object_id: int = STATIC_ID) -> "ObjectMotion":
        z = torch.zeros(3, dtype=DTYPE)
        return ObjectMotion(object_id, z, z.clone(), z.clone(), z.clone(), z.clone())

    def is_zero(self) -> bool:
        return not bool(
            torch.any(self.v_lin != 0) or torch.any(self.a_lin != 0)
            or torch.any(self.omega != 0) or torch.any(self.alpha != 0)
        )

    def requires_grad(self) -> bool:
        return (self.v_lin.requires_grad or self.a_lin.requires_grad
                or self.omega.requires_grad or self.alpha.requires_grad
                or self.centroid.requires_grad)

    def advanced(self, dt: float) -> "ObjectMotion":
        """Motion table entry valid after propagating by dt."""
        return ObjectMotion(
            self.object_id,
            v_lin=self.v_lin + self.a_lin * dt,
            a_lin=self.a_lin,
            omega=self.omega + self.alpha * dt,
            alpha=self.alpha,
            centroid=self.centroid + self.v_lin * dt + 0.5 * self.a_lin * dt * dt,
        )


MotionTable = dict[int, ObjectMotion]


def advanced_table(table: MotionTable, dt: float) -> MotionTable:
    return {oid: m.advanced(dt) for oid, m in table.items()}


def _implied_rotation_rate(p: torch.Tensor, residual: torch.Tensor) -> torch.Tensor:
    """Per-splat rotation rate p x residual / max(|p|^2, eps), averaged over
    splats at least CENTROID_EPS from the centroid."""
    r2 = (p * p).sum(-1)
    keep = r2 >= CENTROID_EPS * CENTROID_EPS
    if not bool(torch.any(keep)):
        return torch.zeros(3, dtype=p.dtype)
    w = torch.linalg.cross(p[keep], residual[keep]) / r2[keep].unsqueeze(-1)
    return w.mean(dim=0)


def aggregate(splats: SplatSet) -> MotionTable:
    """Reduce per-splat velocity/acceleration fields to one rigid motion per object.

    The static id always maps to exactly zero motion. Differentiable with
    respect to splat means, velocities and accelerations.
    """
    table: MotionTable = {STATIC_ID: ObjectMotion.static()}
    ids = torch.unique(splats.object_ids, sorted=True)
    for oid_t in ids:
        oid = int(oid_t)
        if oid == STATIC_ID:
            continue
        member = splats.object_ids == oid
        if not bool(torch.any(member)):
            raise MotionError(f"object {oid} has no member splats")
        mu = splats.means[member]
        v = splats.velocities[member]
        a = splats.accelerations[member]
        centroid = mu.mean(dim=0)
        v_lin = v.mean(dim=0)
        a_lin = a.mean(dim=0)
        p = mu - centroid
        omega = _implied_rotation_rate(p, v - v_lin)
        alpha = _implied_rotation_rate(p, a - a_lin)
        table[oid] = ObjectMotion(oid, v_lin, a_lin, omega, alpha, centroid)
    return table


def propagate(splats: SplatSet, motion: MotionTable, dt: float) -> SplatSet:
    """Advance all splats rigidly by dt seconds.

    Each dynamic splat's mean moves with its object's centroid and rotates
    about it by theta = omega*dt + 0.5*alpha*dt^2 (exponential map); splat
    orientations pick up the same rotation and per-splat velocities advance
    by a*dt so repeated propagation composes. Static or zero-motion objects
    (and dt == 0) pass through unchanged, bitwise.
    """
    if dt < 0:
        raise MotionError(f"propagation is forward-only, got dt={dt}")
    present = set(int(v) for v in torch.unique(splats.object_ids))
    missing = present - set(motion)
    if missing:
        raise MotionError(f"motion table missing object ids {sorted(missing)}")
    if dt == 0:
        return splats.clone()

    means = splats.means.clone()
    rotations = splats.rotations.clone()
    velocities = splats.velocities.clone()

    for oid in sorted(present):
        m = motion[oid]
        # the bitwise pass-through must not short-circuit entries that are on
        # the autograd tape: a zero initial motion still needs its gradient
        if m.is_zero() and not m.requires_grad():
            continue
        member = splats.object_ids == oid
        theta = m.omega * dt + 0.5 * m.alpha * dt * dt
        dq = axis_angle_to_quat(theta)
        R = quat_to_matrix(dq)
        p = splats.means[member] - m.centroid
        shift = m.centroid + m.v_lin * dt + 0.5 * m.a_lin * dt * dt
        idx = member.nonzero(as_tuple=True)[0]
        means = means.index_put((idx,), shift + p @ R.T)
        rotations = rotations.index_put(
            (idx,),
            quat_normalize(quat_multiply(dq.expand(idx.numel(), 4), splats.rotations[member])),
        )
        velocities = velocities.index_put(
            (idx,), splats.velocities[member] + splats.accelerations[member] * dt
        )

    out = splats.clone()
    out.means = means
    out.rotations = rotations
    out.velocities = velocities
    return out
