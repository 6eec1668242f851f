/**
 * Viewer application state: which camera is active, current time/mode/scale,
 * and when to issue a new view request. Kept free of DOM so it is testable;
 * `main.ts` wires it to canvas and input events.
 */

import { FlyCamera, OrbitCamera } from "./camera.js";
import type { Metadata, PoseJson } from "./protocol.js";
import { TrajectoryRecorder } from "./trajectory.js";
import type { ViewParams } from "./transport.js";

export type CameraMode = "orbit" | "fly";
export type RenderMode = "rgb" | "depth";

export interface ViewerState {
  requestView(params: ViewParams): void;
}

const SCALES: Array<1 | 0.5 | 0.25> = [1, 0.5, 0.25];

export class ViewerApp {
  orbit = new OrbitCamera();
  fly = new FlyCamera();
  cameraMode: CameraMode = "orbit";
  renderMode: RenderMode = "rgb";
  scale: 1 | 0.5 | 0.25 = 1;
  time = 0;
  maxTime = 1;
  playing = false;
  recorder = new TrajectoryRecorder();

  constructor(private transport: ViewerState) {}

  applyMetadata(meta: Metadata): void {
    this.maxTime = meta.max_time;
    const [bmin, bmax] = [meta.scene_bounds.min, meta.scene_bounds.max];
    const center: [number, number, number] = [
      (bmin[0] + bmax[0]) / 2,
      (bmin[1] + bmax[1]) / 2,
      (bmin[2] + bmax[2]) / 2,
    ];
    const extent = Math.max(bmax[0] - bmin[0], bmax[1] - bmin[1], bmax[2] - bmin[2], 1e-3);
    this.orbit = new OrbitCamera(center, Math.max(2 * extent, 0.5));
    this.fly = new FlyCamera([center[0], center[1], center[2] - 2 * extent]);
    this.requestFrame();
  }

  pose(): PoseJson {
    return this.cameraMode === "orbit" ? this.orbit.pose() : this.fly.pose();
  }

  requestFrame(): void {
    this.transport.requestView({
      pose: this.pose(),
      time: this.time,
      mode: this.renderMode,
      scale: this.scale,
    });
  }

  setCameraMode(mode: CameraMode): void {
    this.cameraMode = mode;
    this.requestFrame();
  }

  setRenderMode(mode: RenderMode): void {
    this.renderMode = mode;
    this.requestFrame();
  }

  cycleScale(): void {
    this.scale = SCALES[(SCALES.indexOf(this.scale) + 1) % SCALES.length];
    this.requestFrame();
  }

  setTime(t: number): void {
    this.time = Math.min(Math.max(t, 0), this.maxTime);
    this.requestFrame();
  }

  /** Advance playback by dt seconds, wrapping at maxTime. */
  tick(dt: number): void {
    if (!this.playing) return;
    this.time = this.maxTime > 0 ? (this.time + dt) % this.maxTime : 0;
    this.requestFrame();
  }

  recordKeyframe(): void {
    const last = this.recorder.keyframes[this.recorder.keyframes.length - 1];
    // nudge time forward if the slider has not moved since the last keyframe
    const t = last && this.time <= last.time ? last.time + 1e-3 : this.time;
    this.recorder.add(t, this.pose());
  }
}
