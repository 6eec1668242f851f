"""Interactive render service.

Endpoints:
  GET /metadata
      JSON: width, height, intrinsics {fx, fy, cx, cy}, convention ("RDF"),
      scene_bounds {min, max}, depth_range [near, far], suggested_pose
      {quaternion, translation}, max_time.
  WebSocket /ws
      Client sends one JSON text message per view request:
        {"id": int, "pose": {"quaternion": [w,x,y,z], "translation": [x,y,z]},
         "time": float >= 0, "mode": "rgb"|"depth", "scale": 1|0.5|0.25}
      Server replies with a binary message: 4-byte big-endian request id
      followed by a PNG frame. Malformed requests get a JSON text reply
      {"id": ..., "error": ...} and the channel stays open. Requests are
      coalesced: while a frame is rendering, only the newest queued request
      is kept (latest-wins).

Depth mode visualizes inverse depth through the turbo colormap: 1/depth is
mapped linearly so depth_range[0] hits the warm end and depth_range[1] the
cold end; empty pixels render at the cold end.
"""

from __future__ import annotations

import asyncio
import io
import json
import struct

import torch
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from matplotlib import colormaps
from PIL import Image

from .camera import DTYPE, CameraIntrinsics, Pose
from .motion import MotionTable, aggregate, propagate
from .rasterizer import DEFAULT_CONFIG, render
from .scene_io import image_to_uint8, load_scene
from .splat_model import SplatSet, decode

ALLOWED_SCALES = (1.0, 0.5, 0.25)
DEFAULT_MAX_TIME = 2.0

_TURBO = colormaps["turbo"]


class Scene:
    """Immutable decoded scene shared by all sessions."""

    def __init__(self, smap, K: CameraIntrinsics, motion: MotionTable | None,
                 max_time: float = DEFAULT_MAX_TIME):
        self.intrinsics = K
        self.splats: SplatSet = decode(smap.to(DTYPE), K)
        self.motion = motion if motion is not None else aggregate(self.splats)
        self.max_time = max_time
        self.bounds_min = self.splats.means.min(dim=0).values
        self.bounds_max = self.splats.means.max(dim=0).values
        z = self.splats.means[:, 2]
        self.depth_range = (float(z.min()), float(z.max()))

    @staticmethod
    def from_file(path, max_time: float = DEFAULT_MAX_TIME) -> "Scene":
        smap, K, motion = load_scene(path)
        return Scene(smap, K, motion, max_time)

    def metadata(self) -> dict:
        K = self.intrinsics
        return {
            "width": K.width,
            "height": K.height,
            "intrinsics": {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy},
            "convention": "RDF",
            "scene_bounds": {
                "min": [float(v) for v in self.bounds_min],
                "max": [float(v) for v in self.bounds_max],
            },
            "depth_range": list(self.depth_range),
            "suggested_pose": {"quaternion": [1.0, 0.0, 0.0, 0.0],
                               "translation": [0.0, 0.0, 0.0]},
            "max_time": self.max_time,
        }


def depth_to_colors(depth: torch.Tensor, depth_range: tuple[float, float]) -> torch.Tensor:
    """(H, W) depth -> (H, W, 3) turbo-colored inverse depth in [0, 1]."""
    near, far = depth_range
    inv = 1.0 / torch.clamp(depth, min=1e-9)
    inv_near, inv_far = 1.0 / near, 1.0 / far
    norm = (inv - inv_far) / max(inv_near - inv_far, 1e-12)
    norm = torch.clamp(norm, 0.0, 1.0)
    rgba = _TURBO(norm.detach().cpu().numpy())
    return torch.from_numpy(rgba[..., :3]).to(depth.dtype)


def render_frame(scene: Scene, pose: Pose, time: float, mode: str = "rgb",
                 scale: float = 1.0) -> torch.Tensor:
    """Render one frame; returns an (H, W, 3) image in [0, 1]."""
    K = scene.intrinsics if scale == 1.0 else scene.intrinsics.scaled(scale)
    moved = propagate(scene.splats, scene.motion, time)
    out = render(moved, pose, K, DEFAULT_CONFIG)
    if mode == "depth":
        return depth_to_colors(out.depth, scene.depth_range)
    return out.rgb


def encode_png(img: torch.Tensor) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(image_to_uint8(img)).save(buf, format="PNG")
    return buf.getvalue()


class RequestError(ValueError):
    pass


def parse_view_request(text: str) -> dict:
    try:
        msg = json.loads(text)
    except json.JSONDecodeError as e:
        raise RequestError(f"invalid JSON: {e}") from e
    if not isinstance(msg, dict) or "id" not in msg:
        raise RequestError("request must be an object with an 'id' field")
    try:
        req_id = int(msg["id"])
        pose_obj = msg["pose"]
        q = torch.tensor([float(v) for v in pose_obj["quaternion"]], dtype=DTYPE)
        t = torch.tensor([float(v) for v in pose_obj["translation"]], dtype=DTYPE)
        pose = Pose(q, t)
        time = float(msg.get("time", 0.0))
        mode = msg.get("mode", "rgb")
        scale = float(msg.get("scale", 1.0))
    except (KeyError, TypeError, ValueError) as e:
        raise RequestError(str(e)) from e
    if time < 0:
        raise RequestError("time must be >= 0")
    if mode not in ("rgb", "depth"):
        raise RequestError(f"unknown mode {mode!r}")
    if scale not in ALLOWED_SCALES:
        raise RequestError(f"scale must be one of {ALLOWED_SCALES}")
    return {"id": req_id, "pose": pose, "time": time, "mode": mode, "scale": scale}


def create_app(scene: Scene) -> FastAPI:
    app = FastAPI()
    app.state.scene = scene

    @app.get("/metadata")
    def metadata():
        return scene.metadata()

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        slot: dict = {}
        fresh = asyncio.Event()
        done = asyncio.Event()

        async def reader():
            try:
                while True:
                    text = await ws.receive_text()
                    slot["msg"] = text
                    fresh.set()
            except WebSocketDisconnect:
                pass
            finally:
                done.set()
                fresh.set()

        async def worker():
            loop = asyncio.get_running_loop()
            while True:
                await fresh.wait()
                if done.is_set():
                    return
                fresh.clear()
                text = slot["msg"]
                req_id = None
                try:
                    req = parse_view_request(text)
                    req_id = req["id"]
                    png = await loop.run_in_executor(
                        None,
                        lambda: encode_png(render_frame(
                            scene, req["pose"], req["time"], req["mode"], req["scale"])),
                    )
                    await ws.send_bytes(struct.pack(">I", req_id) + png)
                except RequestError as e:
                    await ws.send_text(json.dumps({"id": req_id, "error": str(e)}))
                except WebSocketDisconnect:
                    return
                except Exception as e:  # render failure: report, keep channel open
                    await ws.send_text(json.dumps({"id": req_id, "error": f"render failed: {e}"}))

        reader_task = asyncio.create_task(reader())
        try:
            await worker()
        finally:
            reader_task.cancel()

    return app


def serve(scene_path, port: int = 8000, host: str = "127.0.0.1",
          max_time: float = DEFAULT_MAX_TIME) -> None:
    import uvicorn

    app = create_app(Scene.from_file(scene_path, max_time))
    uvicorn.run(app, host=host, port=port, log_level="info")
