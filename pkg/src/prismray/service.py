"""Interactive sculpting session and its WebSocket service.

The session owns the working displacement/color maps. Brush strokes mutate
the working copies; each frame tick publishes a snapshot to the scene,
re-renders the dirty pixel regions at one sample and emits tiles. Idle
ticks instead add progressive samples to the whole frame. The mutation
path is serial (one session owner); renders only ever see published
snapshots, so there are no torn reads.

Per tick the session reports the edit-loop decomposition
(texture-edit ms, blas ms, ray-trace ms); blas ms is identically zero
because displacement edits never touch the BVH.
"""

import asyncio
import base64
import io
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from . import kernels
from .dispmap import Brush, apply_brush, apply_color_brush, region_max
from .render import (Camera, Framebuffer, dirty_rect_to_pixels,
                     render_frame, render_region)

TILE = 64
IDLE_SPP_CAP = 256


class SessionError(ValueError):
    pass


@dataclass
class StrokeEvent:
    seq: int
    brush: str
    pressure: float = 1.0
    x: Optional[float] = None       # screen pixels
    y: Optional[float] = None
    u: Optional[float] = None       # or direct uv
    v: Optional[float] = None


@dataclass
class TickStats:
    edit_ms: float
    blas_ms: float
    rt_ms: float
    version: int

    def to_dict(self):
        return {"type": "stats", "edit_ms": self.edit_ms,
                "blas_ms": self.blas_ms, "rt_ms": self.rt_ms,
                "version": self.version}


@dataclass
class Tile:
    x: int
    y: int
    w: int
    h: int
    rgb: np.ndarray
    version: int


class EditSession:
    """Live sculpting state over a built scene."""

    def __init__(self, scene, camera=None, seed=0, pick_mode="displaced"):
        self.scene = scene
        self.camera = camera or Camera.from_description(
            scene.description.camera)
        self.fb = Framebuffer.empty(self.camera.width, self.camera.height)
        self.seed = int(seed)
        self.pick_mode = pick_mode
        self.brushes = {}
        self.version = 0
        self.last_seq = -1
        self.working_disp = scene.dispmap.copy() if scene.dispmap else None
        self.working_color = scene.colormap.copy() if scene.colormap else None
        self._dirty_pixel_rects = []
        self._dirty_maps = False
        self._edit_ms_pending = 0.0
        self.last_stats = TickStats(0.0, 0.0, 0.0, 0)
        self._idle_spp = 0

    # -- brushes ------------------------------------------------------------

    def define_brush(self, brush_id, radius, strength, mode="add",
                     color=None, falloff="smooth"):
        self.brushes[str(brush_id)] = Brush(
            radius=int(radius), strength=float(strength), mode=mode,
            color=None if color is None else np.asarray(color, float),
            falloff=falloff)
        return self.brushes[str(brush_id)]

    # -- picking ------------------------------------------------------------

    def pick_uv(self, px, py):
        """Cursor ray against the displaced surface (or the base mesh when
        pick_mode is 'base'); returns (face, barycentric, uv) or None."""
        origin, direction = self.camera.primary_ray(px, py)
        if self.scene.n_prisms == 0:
            return None
        if self.pick_mode == "base":
            return self._pick_base(origin, direction)
        tree = self.scene.bvh
        hit = np.empty(kernels.HIT_SIZE, dtype=np.float64)
        t_eps = 1e-6 * self.scene.scene_scale
        found = kernels.scene_closest_hit_bvh_k(
            np.ascontiguousarray(origin), np.ascontiguousarray(direction),
            t_eps, np.inf,
            tree.nodes_bounds, tree.nodes_meta, tree.prim_order,
            *self.scene.kernel_args(), self.scene.dt_world, 0.0, hit)
        if not found:
            return None
        face = int(hit[kernels.HIT_FACE])
        b = hit[kernels.HIT_B0:kernels.HIT_B0 + 3].copy()
        uv = hit[kernels.HIT_U:kernels.HIT_U + 2].copy()
        return face, b, uv

    def _pick_base(self, origin, direction):
        mesh = self.scene.mesh
        v = mesh.vertices[mesh.faces]
        e1 = v[:, 1] - v[:, 0]
        e2 = v[:, 2] - v[:, 0]
        p = np.cross(direction, e2)
        det = np.einsum("ij,ij->i", e1, p)
        ok = np.abs(det) > 1e-18
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tv = origin - v[:, 0]
        u = np.einsum("ij,ij->i", tv, p) * inv
        q = np.cross(tv, e1)
        w = (q @ direction) * inv
        t = np.einsum("ij,ij->i", e2, q) * inv
        valid = ok & (u >= 0) & (w >= 0) & (u + w <= 1) & (t > 1e-9)
        if not np.any(valid):
            return None
        fi = int(np.argmin(np.where(valid, t, np.inf)))
        b = np.array([1.0 - u[fi] - w[fi], u[fi], w[fi]])
        uv = b @ mesh.uvs[mesh.faces[fi]]
        return fi, b, uv

    # -- strokes ------------------------------------------------------------

    def apply_stroke(self, stroke):
        """Apply one brush dab; returns
        (version, texel DirtyRect, pixel rect, bounds_exceeded) or None
        when the cursor missed the surface."""
        brush = self.brushes.get(str(stroke.brush))
        if brush is None:
            raise SessionError(f"unknown brush id {stroke.brush!r}")
        if stroke.seq <= self.last_seq:
            raise SessionError(
                f"stale stroke seq {stroke.seq} (last {self.last_seq})")
        self.last_seq = stroke.seq
        if stroke.u is not None and stroke.v is not None:
            uv = (float(stroke.u), float(stroke.v))
        else:
            picked = self.pick_uv(float(stroke.x), float(stroke.y))
            if picked is None:
                return None
            uv = tuple(picked[2])
        t0 = time.perf_counter()
        rect = apply_brush(self.working_disp, uv, brush, stroke.pressure)
        if brush.color is not None and self.working_color is not None:
            crect = apply_color_brush(self.working_color, uv, brush,
                                      stroke.pressure)
            rect = rect.union(crect)
        self._edit_ms_pending += (time.perf_counter() - t0) * 1e3
        self._dirty_maps = True
        self.version += 1

        exceeded = self._edit_exceeds_bounds(rect)
        pixel_rect = dirty_rect_to_pixels(self.scene, self.camera, rect)
        if pixel_rect[2] > pixel_rect[0] and pixel_rect[3] > pixel_rect[1]:
            self._dirty_pixel_rects.append(pixel_rect)
        return self.version, rect, pixel_rect, exceeded

    def _edit_exceeds_bounds(self, rect):
        """True when the edit pushed the map above some touched prism's
        offset budget (the prism would need a rebuild to bound it)."""
        if rect.empty or self.scene.n_prisms == 0:
            return False
        peak = region_max(self.working_disp, rect)
        world = (self.working_disp.world_bias
                 + peak * self.working_disp.world_scale)
        faces = self.scene.faces_touching_uv_rect(rect)
        if faces.size == 0:
            return False
        budgets = (self.scene.prisms["wmax"][faces]
                   - self.scene.prisms["wneg"][faces])
        return bool(world > budgets.min())

    # -- camera -------------------------------------------------------------

    def set_camera(self, position=None, look_at=None, fov_deg=None):
        """Camera motion restarts convergence (counts reset everywhere)."""
        cam = self.camera
        self.camera = Camera(
            position if position is not None else cam.position,
            look_at if look_at is not None else cam.look_at,
            cam.up, fov_deg if fov_deg is not None else cam.fov_deg,
            cam.width, cam.height)
        self.fb = Framebuffer.empty(cam.width, cam.height)
        self._dirty_pixel_rects = []
        self._idle_spp = 0
        self.version += 1

    # -- the edit loop ------------------------------------------------------

    def frame_tick(self):
        """One loop iteration: publish edits, render what needs rendering,
        emit tiles. Returns (tiles, stats)."""
        edit_ms = self._edit_ms_pending
        self._edit_ms_pending = 0.0
        if self._dirty_maps:
            t0 = time.perf_counter()
            self.scene.publish_maps(
                self.working_disp.copy(),
                self.working_color.copy() if self.working_color else None)
            edit_ms += (time.perf_counter() - t0) * 1e3
            self._dirty_maps = False

        rects = self._dirty_pixel_rects
        self._dirty_pixel_rects = []
        t0 = time.perf_counter()
        updated = []
        if rects:
            for r in rects:
                render_region(self.scene, self.camera, self.fb, r,
                              spp=1, seed=self.seed)
                updated.append(r)
            self._idle_spp = 0
        elif self._idle_spp < IDLE_SPP_CAP:
            render_frame(self.scene, self.camera, spp=1, seed=self.seed,
                         fb=self.fb, accumulate=True)
            self._idle_spp += 1
            updated.append((0, 0, self.camera.width, self.camera.height))
        rt_ms = (time.perf_counter() - t0) * 1e3

        tiles = self._emit_tiles(updated)
        self.last_stats = TickStats(edit_ms, 0.0, rt_ms, self.version)
        return tiles, self.last_stats

    def _emit_tiles(self, rects):
        from .render import resolve
        tiles = []
        if not rects:
            return tiles
        img = resolve(self.fb)
        seen = set()
        for (x0, y0, x1, y1) in rects:
            tx0 = (x0 // TILE) * TILE
            ty0 = (y0 // TILE) * TILE
            for ty in range(ty0, y1, TILE):
                for tx in range(tx0, x1, TILE):
                    key = (tx, ty)
                    if key in seen:
                        continue
                    seen.add(key)
                    x2 = min(tx + TILE, self.camera.width)
                    y2 = min(ty + TILE, self.camera.height)
                    tiles.append(Tile(tx, ty, x2 - tx, y2 - ty,
                                      img[ty:y2, tx:x2].copy(),
                                      self.version))
        return tiles


# ---------------------------------------------------------------------------
# WebSocket transport
# ---------------------------------------------------------------------------

def encode_tile(tile):
    buf = io.BytesIO()
    Image.fromarray(tile.rgb).save(buf, format="PNG")
    return {
        "type": "tile", "version": tile.version,
        "x": tile.x, "y": tile.y, "w": tile.w, "h": tile.h,
        "png_base64": base64.b64encode(buf.getvalue()).decode("ascii"),
    }


def create_app(scene, scene_doc=None, seed=0, tick_interval=0.05,
               ui_dir=None):
    """FastAPI app speaking the sculpting protocol.

    One session per WebSocket connection. GET / serves the UI bundle
    (frontend build if present, else a minimal status page); GET /scene
    returns the scene description document.
    """
    from fastapi import FastAPI, WebSocket, WebSocketDisconnect
    from fastapi.responses import HTMLResponse, JSONResponse, FileResponse

    app = FastAPI(title="prismray edit service")
    app.state.scene = scene
    app.state.scene_doc = scene_doc or {}
    app.state.seed = seed

    if ui_dir is None:
        ui_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    ui_index = Path(ui_dir) / "index.html"

    @app.get("/")
    def index():
        if ui_index.exists():
            return FileResponse(ui_index)
        return HTMLResponse(
            "<html><body><h3>prismray edit service</h3>"
            "<p>No UI bundle found; connect a WebSocket client to /ws."
            "</p></body></html>")

    @app.get("/app.js")
    def app_js():
        js = Path(ui_dir) / "app.js"
        if js.exists():
            return FileResponse(js)
        return HTMLResponse("// no UI bundle", media_type="text/javascript")

    @app.get("/scene")
    def scene_description():
        return JSONResponse(app.state.scene_doc)

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        session = EditSession(app.state.scene, seed=app.state.seed)
        try:
            while True:
                processed_any = False
                try:
                    text = await asyncio.wait_for(ws.receive_text(),
                                                  timeout=tick_interval)
                    await _handle_message(ws, session, text)
                    processed_any = True
                    # drain whatever else is queued before rendering
                    while True:
                        try:
                            text = await asyncio.wait_for(
                                ws.receive_text(), timeout=0.001)
                            await _handle_message(ws, session, text)
                        except asyncio.TimeoutError:
                            break
                except asyncio.TimeoutError:
                    pass
                if processed_any or session._idle_spp < IDLE_SPP_CAP:
                    tiles, stats = await asyncio.to_thread(session.frame_tick)
                    for tile in tiles:
                        await ws.send_text(json.dumps(encode_tile(tile)))
                    await ws.send_text(json.dumps(stats.to_dict()))
        except WebSocketDisconnect:
            return

    return app


async def _handle_message(ws, session, text):
    try:
        msg = json.loads(text)
    except json.JSONDecodeError:
        await ws.send_text(json.dumps(
            {"type": "error", "message": "malformed JSON"}))
        return
    kind = msg.get("type")
    try:
        if kind == "brush.define":
            session.define_brush(
                msg["id"], msg.get("radius", 8), msg.get("strength", 0.5),
                msg.get("mode", "add"), msg.get("color"),
                msg.get("falloff", "smooth"))
        elif kind == "stroke":
            stroke = StrokeEvent(
                seq=int(msg["seq"]), brush=str(msg["brush"]),
                pressure=float(msg.get("pressure", 1.0)),
                x=msg.get("x"), y=msg.get("y"),
                u=msg.get("u"), v=msg.get("v"))
            if stroke.u is None and stroke.x is not None:
                picked = session.pick_uv(float(stroke.x), float(stroke.y))
                if picked is None:
                    await ws.send_text(json.dumps(
                        {"type": "picked", "miss": True}))
                    session.last_seq = max(session.last_seq, stroke.seq)
                    return
                face, _b, uv = picked
                await ws.send_text(json.dumps(
                    {"type": "picked", "u": float(uv[0]), "v": float(uv[1]),
                     "face": int(face)}))
                stroke.u, stroke.v = float(uv[0]), float(uv[1])
            session.apply_stroke(stroke)
        elif kind == "camera":
            session.set_camera(msg.get("position"), msg.get("look_at"),
                               msg.get("fov_deg"))
        else:
            await ws.send_text(json.dumps(
                {"type": "error", "message": f"unknown type {kind!r}"}))
    except (SessionError, KeyError, TypeError, ValueError) as exc:
        await ws.send_text(json.dumps({"type": "error",
                                       "message": str(exc)}))


def serve(scene, scene_doc=None, host="127.0.0.1", port=8123, seed=0):
    import uvicorn
    app = create_app(scene, scene_doc, seed=seed)
    uvicorn.run(app, host=host, port=port, log_level="warning")
