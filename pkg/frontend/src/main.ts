/**
 * Browser entry point: wires ViewerApp to the canvas, mouse/keyboard input,
 * the time slider, and the render-service WebSocket.
 */

import { ViewerApp } from "./viewer.js";
import { ViewerClient } from "./transport.js";
import type { Metadata } from "./protocol.js";

const PLAYBACK_FPS = 15;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function start(): Promise<void> {
  const canvas = el<HTMLCanvasElement>("frame");
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d canvas context unavailable");
  const banner = el<HTMLDivElement>("banner");
  const slider = el<HTMLInputElement>("time-slider");
  const timeLabel = el<HTMLSpanElement>("time-label");
  const playBtn = el<HTMLButtonElement>("play");
  const modeBtn = el<HTMLButtonElement>("mode");
  const cameraBtn = el<HTMLButtonElement>("camera");
  const scaleBtn = el<HTMLButtonElement>("scale");
  const keyframeBtn = el<HTMLButtonElement>("keyframe");
  const exportBtn = el<HTMLButtonElement>("export");

  const host = location.host || "127.0.0.1:8000";
  const wsUrl = `${location.protocol === "https:" ? "wss" : "ws"}://${host}/ws`;

  const client = new ViewerClient(wsUrl, {
    onFrame: async (frame) => {
      const blob = new Blob([frame.png as BlobPart], { type: "image/png" });
      const bitmap = await createImageBitmap(blob);
      canvas.width = bitmap.width;
      canvas.height = bitmap.height;
      ctx.drawImage(bitmap, 0, 0);
      bitmap.close();
    },
    onError: (message) => {
      banner.textContent = message;
      banner.classList.add("error");
    },
    onStatus: (status) => {
      if (status !== "open") {
        banner.textContent = status === "connecting" ? "connecting…" : "disconnected — retrying";
        banner.classList.remove("error");
      } else {
        banner.textContent = "";
      }
    },
  });

  const app = new ViewerApp(client);

  const meta: Metadata = await (await fetch(`${location.protocol}//${host}/metadata`)).json();
  slider.min = "0";
  slider.max = String(meta.max_time);
  slider.step = String(meta.max_time / 200 || 0.01);

  client.connect();
  app.applyMetadata(meta);

  const syncTime = () => {
    slider.value = String(app.time);
    timeLabel.textContent = `${app.time.toFixed(2)} s`;
  };
  syncTime();

  slider.addEventListener("input", () => {
    app.setTime(Number(slider.value));
    syncTime();
  });
  playBtn.addEventListener("click", () => {
    app.playing = !app.playing;
    playBtn.textContent = app.playing ? "pause" : "play";
  });
  modeBtn.addEventListener("click", () => {
    app.setRenderMode(app.renderMode === "rgb" ? "depth" : "rgb");
    modeBtn.textContent = app.renderMode;
  });
  cameraBtn.addEventListener("click", () => {
    app.setCameraMode(app.cameraMode === "orbit" ? "fly" : "orbit");
    cameraBtn.textContent = app.cameraMode;
  });
  scaleBtn.addEventListener("click", () => {
    app.cycleScale();
    scaleBtn.textContent = `scale ${app.scale}`;
  });
  keyframeBtn.addEventListener("click", () => app.recordKeyframe());
  exportBtn.addEventListener("click", () => {
    let text: string;
    try {
      text = app.recorder.export();
    } catch (e) {
      banner.textContent = String(e);
      return;
    }
    const url = URL.createObjectURL(new Blob([text], { type: "text/plain" }));
    const a = document.createElement("a");
    a.href = url;
    a.download = "trajectory.txt";
    a.click();
    URL.revokeObjectURL(url);
  });

  // mouse: drag = rotate/look, shift-drag = pan (orbit), wheel = zoom/dolly
  let dragging = false;
  canvas.addEventListener("mousedown", () => (dragging = true));
  window.addEventListener("mouseup", () => (dragging = false));
  canvas.addEventListener("mousemove", (ev) => {
    if (!dragging) return;
    const dx = ev.movementX * 0.005;
    const dy = ev.movementY * 0.005;
    if (app.cameraMode === "orbit") {
      if (ev.shiftKey) app.orbit.pan(-dx * app.orbit.distance, -dy * app.orbit.distance);
      else app.orbit.rotate(-dx, dy);
    } else {
      app.fly.look(dx, -dy);
    }
    app.requestFrame();
  });
  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    const k = Math.exp(ev.deltaY * 0.001);
    if (app.cameraMode === "orbit") app.orbit.zoom(k);
    else app.fly.move(0, 0, -ev.deltaY * 0.01);
    app.requestFrame();
  });

  // keys: WASD + QE move the fly camera
  const FLY_STEP = 0.15;
  window.addEventListener("keydown", (ev) => {
    if (app.cameraMode !== "fly") return;
    const steps: Record<string, [number, number, number]> = {
      w: [0, 0, FLY_STEP],
      s: [0, 0, -FLY_STEP],
      a: [-FLY_STEP, 0, 0],
      d: [FLY_STEP, 0, 0],
      q: [0, -FLY_STEP, 0],
      e: [0, FLY_STEP, 0],
    };
    const step = steps[ev.key.toLowerCase()];
    if (step) {
      app.fly.move(...step);
      app.requestFrame();
    }
  });

  setInterval(() => {
    app.tick(1 / PLAYBACK_FPS);
    if (app.playing) syncTime();
  }, 1000 / PLAYBACK_FPS);
}

start().catch((e) => {
  const banner = document.getElementById("banner");
  if (banner) banner.textContent = String(e);
});
