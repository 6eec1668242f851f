"""File formats: binary scene files, depth planes, PNG frames, masks, trajectories.

Scene file layout (all little-endian):

    magic       4 bytes  b"S4D1"
    convention  4 bytes  b"RDF\\0"  (+x right, +y down, +z forward)
    H, W, N     3 x uint32
    intrinsics  fx, fy, cx, cy as float64; width, height as uint32
    flags       uint32   bit 0: motion table present
    planes      float32, in order: base_depth (H*W), depth_offset (N*H*W),
                xy_offset (N*H*W*2), rotation (N*H*W*4), log_scale (N*H*W*3),
                opacity_raw (N*H*W), color (N*H*W*3), velocity (N*H*W*3),
                acceleration (N*H*W*3); then object_id as int32 (H*W)
    motion      uint32 count; per entry: int32 object id + 15 float64
                (v_lin, a_lin, omega, alpha, centroid)
    checksum    8 bytes, BLAKE2b-64 of all preceding bytes

Depth files use the same discipline with magic b"S4DD" and a single float32
plane. Trajectories are hand-editable text: one "time qw qx qy qz tx ty tz"
line per pose, '#' comments, strictly increasing times.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

from .camera import DTYPE, CameraIntrinsics, Pose, quat_slerp
from .motion import MotionTable, ObjectMotion
from .splat_model import SplatMap

SCENE_MAGIC = b"S4D1"
DEPTH_MAGIC = b"S4DD"
CONVENTION_TAG = b"RDF\0"


class SceneFormatError(ValueError):
    pass


class VersionError(SceneFormatError):
    pass


class ChecksumError(SceneFormatError):
    pass


class TruncatedFileError(SceneFormatError):
    pass


class DimensionError(SceneFormatError):
    pass


class TrajectoryError(ValueError):
    pass


def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def _plane_bytes(t: torch.Tensor, np_dtype) -> bytes:
    return np.ascontiguousarray(t.detach().cpu().numpy().astype(np_dtype, copy=False)).tobytes()


def save_scene(path, smap: SplatMap, K: CameraIntrinsics,
               motion: MotionTable | None = None) -> None:
    """Write a scene file; float channels are stored as float32."""
    H, W, N = smap.height, smap.width, smap.layers
    parts = [
        SCENE_MAGIC,
        CONVENTION_TAG,
        struct.pack("<III", H, W, N),
        struct.pack("<ddddII", K.fx, K.fy, K.cx, K.cy, K.width, K.height),
        struct.pack("<I", 1 if motion is not None else 0),
    ]
    for t in smap.float_channels().values():
        parts.append(_plane_bytes(t, np.float32))
    parts.append(_plane_bytes(smap.object_id, np.int32))
    if motion is not None:
        entries = sorted(motion.values(), key=lambda m: m.object_id)
        parts.append(struct.pack("<I", len(entries)))
        for m in entries:
            vals = torch.cat([m.v_lin, m.a_lin, m.omega, m.alpha, m.centroid])
            parts.append(struct.pack("<i", m.object_id))
            parts.append(struct.pack("<15d", *[float(v) for v in vals]))
    payload = b"".join(parts)
    with open(path, "wb") as f:
        f.write(payload)
        f.write(_checksum(payload))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"file truncated: needed {self.pos + n} bytes, have {len(self.data)}"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_scene(path) -> tuple[SplatMap, CameraIntrinsics, MotionTable | None]:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 8:
        raise TruncatedFileError("file shorter than its checksum")
    payload, digest = blob[:-8], blob[-8:]
    if _checksum(payload) != digest:
        raise ChecksumError("scene file checksum mismatch")
    r = _Reader(payload)
    magic = r.take(4)
    if magic != SCENE_MAGIC:
        raise VersionError(f"bad magic: found {magic!r}, expected {SCENE_MAGIC!r}")
    tag = r.take(4)
    if tag != CONVENTION_TAG:
        raise VersionError(f"unknown coordinate convention tag {tag!r}")
    H, W, N = r.unpack("<III")
    fx, fy, cx, cy, kw, kh = r.unpack("<ddddII")
    if (kw, kh) != (W, H):
        raise DimensionError(f"intrinsics size {kw}x{kh} does not match planes {W}x{H}")
    (flags,) = r.unpack("<I")

    def plane(shape, np_dtype, torch_dtype):
        n = int(np.prod(shape))
        raw = r.take(n * np.dtype(np_dtype).itemsize)
        arr = np.frombuffer(raw, dtype=np_dtype).reshape(shape)
        return torch.from_numpy(arr.copy()).to(torch_dtype)

    smap = SplatMap(
        base_depth=plane((H, W), "<f4", torch.float32),
        depth_offset=plane((N, H, W), "<f4", torch.float32),
        xy_offset=plane((N, H, W, 2), "<f4", torch.float32),
        rotation=plane((N, H, W, 4), "<f4", torch.float32),
        log_scale=plane((N, H, W, 3), "<f4", torch.float32),
        opacity_raw=plane((N, H, W), "<f4", torch.float32),
        color=plane((N, H, W, 3), "<f4", torch.float32),
        velocity=plane((N, H, W, 3), "<f4", torch.float32),
        acceleration=plane((N, H, W, 3), "<f4", torch.float32),
        object_id=plane((H, W), "<i4", torch.int64),
    )
    K = CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=W, height=H)

    motion = None
    if flags & 1:
        (count,) = r.unpack("<I")
        motion = {}
        for _ in range(count):
            (oid,) = r.unpack("<i")
            vals = torch.tensor(r.unpack("<15d"), dtype=DTYPE)
            motion[oid] = ObjectMotion(
                oid, vals[0:3], vals[3:6], vals[6:9], vals[9:12], vals[12:15]
            )
    if r.pos != len(payload):
        raise DimensionError(f"{len(payload) - r.pos} unexpected trailing bytes")
    return smap, K, motion


def save_depth(path, depth: torch.Tensor) -> None:
    H, W = depth.shape
    payload = DEPTH_MAGIC + struct.pack("<II", H, W) + _plane_bytes(depth, np.float32)
    with open(path, "wb") as f:
        f.write(payload)
        f.write(_checksum(payload))


def load_depth(path) -> torch.Tensor:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 8:
        raise TruncatedFileError("file shorter than its checksum")
    payload, digest = blob[:-8], blob[-8:]
    if _checksum(payload) != digest:
        raise ChecksumError("depth file checksum mismatch")
    r = _Reader(payload)
    magic = r.take(4)
    if magic != DEPTH_MAGIC:
        raise VersionError(f"bad magic: found {magic!r}, expected {DEPTH_MAGIC!r}")
    H, W = r.unpack("<II")
    raw = r.take(H * W * 4)
    if r.pos != len(payload):
        raise DimensionError("unexpected trailing bytes in depth file")
    return torch.from_numpy(np.frombuffer(raw, dtype="<f4").reshape(H, W).copy()).to(DTYPE)


def image_to_uint8(img: torch.Tensor) -> np.ndarray:
    """[0, 1] float image -> uint8 with round-half-up."""
    arr = img.detach().cpu().numpy()
    return np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).clip(0, 255).astype(np.uint8)


def save_image(path, img: torch.Tensor) -> None:
    Image.fromarray(image_to_uint8(img)).save(path, format="PNG")


def load_image(path) -> torch.Tensor:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return torch.from_numpy(arr)


def load_mask(path) -> torch.Tensor:
    """Instance id map from an 8- or 16-bit single-channel image; 0 = static."""
    with Image.open(path) as im:
        if im.mode in ("L", "P"):
            arr = np.asarray(im.convert("L"), dtype=np.int64)
        elif im.mode in ("I", "I;16"):
            arr = np.asarray(im, dtype=np.int64)
        else:
            raise SceneFormatError(f"mask must be single-channel, got mode {im.mode!r}")
    return torch.from_numpy(arr)


@dataclass
class Trajectory:
    times: list[float]
    poses: list[Pose]

    @property
    def t_start(self) -> float:
        return self.times[0]

    @property
    def t_end(self) -> float:
        return self.times[-1]


def format_pose_line(time: float, pose: Pose) -> str:
    q = [float(v) for v in pose.rotation]
    t = [float(v) for v in pose.translation]
    return " ".join(f"{v:.17g}" for v in [time, *q, *t])


def save_trajectory(path, traj: Trajectory) -> None:
    lines = ["# time qw qx qy qz tx ty tz"]
    lines += [format_pose_line(t, p) for t, p in zip(traj.times, traj.poses)]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def parse_trajectory(text: str) -> Trajectory:
    times: list[float] = []
    poses: list[Pose] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 8:
            raise TrajectoryError(f"line {lineno}: expected 8 fields, got {len(fields)}")
        try:
            vals = [float(v) for v in fields]
        except ValueError as e:
            raise TrajectoryError(f"line {lineno}: {e}") from e
        t = vals[0]
        q = torch.tensor(vals[1:5], dtype=DTYPE)
        qn = float(torch.linalg.norm(q))
        if qn < 1e-9:
            raise TrajectoryError(f"line {lineno}: quaternion not normalizable")
        if times and t <= times[-1]:
            raise TrajectoryError(f"line {lineno}: times must be strictly increasing")
        times.append(t)
        poses.append(Pose(q / qn, torch.tensor(vals[5:8], dtype=DTYPE)))
    if not times:
        raise TrajectoryError("trajectory has no poses")
    return Trajectory(times, poses)


def load_trajectory(path) -> Trajectory:
    with open(path) as f:
        return parse_trajectory(f.read())


def interpolate_pose(traj: Trajectory, time: float) -> Pose:
    """Slerp on rotation, lerp on translation between the bracketing samples."""
    if time < traj.t_start or time > traj.t_end:
        raise TrajectoryError(
            f"time {time} outside trajectory range [{traj.t_start}, {traj.t_end}]"
        )
    times = traj.times
    # exact at samples
    for i, t in enumerate(times):
        if time == t:
            return traj.poses[i]
    hi = next(i for i, t in enumerate(times) if t > time)
    lo = hi - 1
    u = (time - times[lo]) / (times[hi] - times[lo])
    p0, p1 = traj.poses[lo], traj.poses[hi]
    q = quat_slerp(p0.rotation, p1.rotation, u)
    t = (1 - u) * p0.translation + u * p1.translation
    return Pose(q, t)
