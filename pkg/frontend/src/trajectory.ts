/**
 * Camera-path recording and export in the engine's trajectory text format:
 * a "# time qw qx qy qz tx ty tz" header, then one whitespace-separated line
 * per keyframe with strictly increasing times. JS number-to-string gives the
 * shortest decimal that round-trips to the same double, so re-parsing is exact.
 */

import type { PoseJson } from "./protocol.js";

export interface Keyframe {
  time: number;
  pose: PoseJson;
}

export const TRAJECTORY_HEADER = "# time qw qx qy qz tx ty tz";

export function formatPoseLine(time: number, pose: PoseJson): string {
  return [time, ...pose.quaternion, ...pose.translation].map(String).join(" ");
}

export class TrajectoryRecorder {
  readonly keyframes: Keyframe[] = [];

  add(time: number, pose: PoseJson): void {
    const last = this.keyframes[this.keyframes.length - 1];
    if (last && time <= last.time) {
      throw new Error(`keyframe times must be strictly increasing (${time} after ${last.time})`);
    }
    this.keyframes.push({
      time,
      pose: {
        quaternion: [...pose.quaternion],
        translation: [...pose.translation],
      },
    });
  }

  clear(): void {
    this.keyframes.length = 0;
  }

  export(): string {
    if (this.keyframes.length === 0) {
      throw new Error("no keyframes recorded");
    }
    const lines = [TRAJECTORY_HEADER];
    for (const kf of this.keyframes) {
      lines.push(formatPoseLine(kf.time, kf.pose));
    }
    return lines.join("\n") + "\n";
  }
}

/** Parse trajectory text back into keyframes (inverse of `export`). */
export function parseTrajectory(text: string): Keyframe[] {
  const frames: Keyframe[] = [];
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (!line || line.startsWith("#")) continue;
    const fields = line.split(/\s+/).map(Number);
    if (fields.length !== 8 || fields.some((v) => Number.isNaN(v))) {
      throw new Error(`line ${i + 1}: expected 8 numeric fields`);
    }
    const [time, qw, qx, qy, qz, tx, ty, tz] = fields;
    const prev = frames[frames.length - 1];
    if (prev && time <= prev.time) {
      throw new Error(`line ${i + 1}: times must be strictly increasing`);
    }
    frames.push({ time, pose: { quaternion: [qw, qx, qy, qz], translation: [tx, ty, tz] } });
  }
  if (frames.length === 0) throw new Error("trajectory has no poses");
  return frames;
}
