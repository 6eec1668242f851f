/**
 * Camera models producing camera-from-world poses in the server's convention:
 * right-handed, +x right, +y down, +z forward; quaternion (w, x, y, z);
 * p_cam = R p_world + t.
 */

import type { PoseJson } from "./protocol.js";

export type Vec3 = [number, number, number];
export type Quat = [number, number, number, number]; // (w, x, y, z)

export function cross(a: Vec3, b: Vec3): Vec3 {
  return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
}

export function normalize(v: Vec3): Vec3 {
  const n = Math.hypot(v[0], v[1], v[2]);
  if (n === 0) throw new Error("cannot normalize zero vector");
  return [v[0] / n, v[1] / n, v[2] / n];
}

/** Quaternion (w, x, y, z) from a row-major 3x3 rotation matrix. */
export function matrixToQuat(m: number[][]): Quat {
  const trace = m[0][0] + m[1][1] + m[2][2];
  let w: number, x: number, y: number, z: number;
  if (trace > 0) {
    const s = Math.sqrt(trace + 1) * 2;
    w = s / 4;
    x = (m[2][1] - m[1][2]) / s;
    y = (m[0][2] - m[2][0]) / s;
    z = (m[1][0] - m[0][1]) / s;
  } else if (m[0][0] > m[1][1] && m[0][0] > m[2][2]) {
    const s = Math.sqrt(1 + m[0][0] - m[1][1] - m[2][2]) * 2;
    w = (m[2][1] - m[1][2]) / s;
    x = s / 4;
    y = (m[0][1] + m[1][0]) / s;
    z = (m[0][2] + m[2][0]) / s;
  } else if (m[1][1] > m[2][2]) {
    const s = Math.sqrt(1 + m[1][1] - m[0][0] - m[2][2]) * 2;
    w = (m[0][2] - m[2][0]) / s;
    x = (m[0][1] + m[1][0]) / s;
    y = s / 4;
    z = (m[1][2] + m[2][1]) / s;
  } else {
    const s = Math.sqrt(1 + m[2][2] - m[0][0] - m[1][1]) * 2;
    w = (m[1][0] - m[0][1]) / s;
    x = (m[0][2] + m[2][0]) / s;
    y = (m[1][2] + m[2][1]) / s;
    z = s / 4;
  }
  const n = Math.hypot(w, x, y, z);
  // canonical sign: w >= 0
  const sgn = w < 0 ? -1 : 1;
  return [(sgn * w) / n, (sgn * x) / n, (sgn * y) / n, (sgn * z) / n];
}

export function quatToMatrix(q: Quat): number[][] {
  const [w, x, y, z] = q;
  return [
    [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
    [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
    [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
  ];
}

export function applyPose(pose: PoseJson, p: Vec3): Vec3 {
  const m = quatToMatrix(pose.quaternion as Quat);
  const t = pose.translation;
  return [
    m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2] + t[0],
    m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2] + t[1],
    m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2] + t[2],
  ];
}

/**
 * Camera-from-world pose for a camera at `position` whose +z axis points along
 * `forward` (unit). World "down" is +y; the camera is kept upright.
 */
export function lookPose(position: Vec3, forward: Vec3): PoseJson {
  const f = normalize(forward);
  const down: Vec3 = [0, 1, 0];
  // right = down x forward (x = y x z in a right-handed frame)
  let r: Vec3;
  try {
    r = normalize(cross(down, f));
  } catch {
    // looking straight up/down: pick a stable right axis
    r = [1, 0, 0];
  }
  const u = cross(f, r); // camera down axis in world coordinates
  // world-from-camera columns are (r, u, f); camera-from-world is its transpose
  const rot = [
    [r[0], r[1], r[2]],
    [u[0], u[1], u[2]],
    [f[0], f[1], f[2]],
  ];
  const t: Vec3 = [
    -(rot[0][0] * position[0] + rot[0][1] * position[1] + rot[0][2] * position[2]),
    -(rot[1][0] * position[0] + rot[1][1] * position[1] + rot[1][2] * position[2]),
    -(rot[2][0] * position[0] + rot[2][1] * position[1] + rot[2][2] * position[2]),
  ];
  return { quaternion: matrixToQuat(rot), translation: t };
}

const MIN_DISTANCE = 1e-3;
const MAX_ELEVATION = (89.9 * Math.PI) / 180;

/**
 * Orbit camera around a target point. Azimuth 0 / elevation 0 places the
 * camera at target - distance * z, looking along +z; positive elevation moves
 * the camera up (world -y), positive azimuth swings it toward +x.
 */
export class OrbitCamera {
  constructor(
    public target: Vec3 = [0, 0, 0],
    public distance = 5,
    public azimuth = 0,
    public elevation = 0,
  ) {
    if (distance <= 0) throw new Error("distance must be positive");
  }

  /** Unit vector from the camera toward the target. */
  forward(): Vec3 {
    const ce = Math.cos(this.elevation);
    return [ce * Math.sin(this.azimuth), Math.sin(this.elevation), ce * Math.cos(this.azimuth)];
  }

  position(): Vec3 {
    const f = this.forward();
    return [
      this.target[0] - this.distance * f[0],
      this.target[1] - this.distance * f[1],
      this.target[2] - this.distance * f[2],
    ];
  }

  pose(): PoseJson {
    return lookPose(this.position(), this.forward());
  }

  rotate(dAzimuth: number, dElevation: number): void {
    this.azimuth += dAzimuth;
    this.elevation = Math.min(MAX_ELEVATION, Math.max(-MAX_ELEVATION, this.elevation + dElevation));
  }

  zoom(factor: number): void {
    if (factor <= 0) throw new Error("zoom factor must be positive");
    this.distance = Math.max(MIN_DISTANCE, this.distance * factor);
  }

  pan(dxRight: number, dyDown: number): void {
    const f = this.forward();
    const r = normalize(cross([0, 1, 0], f));
    const u = cross(f, r);
    this.target = [
      this.target[0] + dxRight * r[0] + dyDown * u[0],
      this.target[1] + dxRight * r[1] + dyDown * u[1],
      this.target[2] + dxRight * r[2] + dyDown * u[2],
    ];
  }
}

/** Free-fly camera: a position plus yaw/pitch, moved with keys. */
export class FlyCamera {
  constructor(
    public position: Vec3 = [0, 0, 0],
    public yaw = 0,
    public pitch = 0,
  ) {}

  forward(): Vec3 {
    const cp = Math.cos(this.pitch);
    return [cp * Math.sin(this.yaw), Math.sin(this.pitch), cp * Math.cos(this.yaw)];
  }

  pose(): PoseJson {
    return lookPose(this.position, this.forward());
  }

  look(dYaw: number, dPitch: number): void {
    this.yaw += dYaw;
    this.pitch = Math.min(MAX_ELEVATION, Math.max(-MAX_ELEVATION, this.pitch + dPitch));
  }

  /** Translate in the camera frame: +x right, +y down, +z forward. */
  move(right: number, down: number, forward: number): void {
    const f = this.forward();
    const r = normalize(cross([0, 1, 0], f));
    const u = cross(f, r);
    this.position = [
      this.position[0] + right * r[0] + down * u[0] + forward * f[0],
      this.position[1] + right * r[1] + down * u[1] + forward * f[1],
      this.position[2] + right * r[2] + down * u[2] + forward * f[2],
    ];
  }
}
