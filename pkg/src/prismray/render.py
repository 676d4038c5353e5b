"""Camera, framebuffer, frame/region rendering and image output."""

import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import render_kernels as rk


@dataclass
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    fov_deg: float
    width: int
    height: int

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.look_at = np.asarray(self.look_at, dtype=np.float64)
        self.up = np.asarray(self.up, dtype=np.float64)
        if not (0.0 < self.fov_deg < 180.0):
            raise ValueError("fov must be in (0, 180) degrees")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")

    @classmethod
    def from_description(cls, d, width=None, height=None):
        return cls(d.position, d.look_at, d.up, d.fov_deg,
                   width or d.width, height or d.height)

    def basis(self):
        fwd = self.look_at - self.position
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, self.up)
        rl = np.linalg.norm(right)
        if rl < 1e-12:
            raise ValueError("camera up is parallel to the view direction")
        right = right / rl
        up = np.cross(right, fwd)
        return right, up, fwd

    @property
    def tan_half_fov(self):
        return float(np.tan(np.radians(self.fov_deg) * 0.5))

    def primary_ray(self, px, py, jx=0.5, jy=0.5):
        """Ray through pixel (px, py) with sub-pixel offset (jx, jy)."""
        right, up, fwd = self.basis()
        aspect = self.width / self.height
        ndc_x = (2.0 * ((px + jx) / self.width) - 1.0) \
            * self.tan_half_fov * aspect
        ndc_y = (1.0 - 2.0 * ((py + jy) / self.height)) * self.tan_half_fov
        d = fwd + right * ndc_x + up * ndc_y
        return self.position.copy(), d / np.linalg.norm(d)

    def project(self, points):
        """World points -> (pixel xy, in_front flag). Conservative helper
        for dirty-rect mapping; points behind the eye flag False."""
        right, up, fwd = self.basis()
        rel = np.atleast_2d(points) - self.position
        z = rel @ fwd
        x = rel @ right
        y = rel @ up
        in_front = z > 1e-9
        zs = np.where(in_front, z, 1.0)
        aspect = self.width / self.height
        ndc_x = x / (zs * self.tan_half_fov * aspect)
        ndc_y = y / (zs * self.tan_half_fov)
        px = (ndc_x + 1.0) * 0.5 * self.width
        py = (1.0 - ndc_y) * 0.5 * self.height
        return np.stack([px, py], axis=1), in_front


@dataclass
class Framebuffer:
    accum: np.ndarray    # (h, w, 3) float32 linear
    counts: np.ndarray   # (h, w) int32

    @classmethod
    def empty(cls, width, height):
        return cls(np.zeros((height, width, 3), dtype=np.float32),
                   np.zeros((height, width), dtype=np.int32))

    @property
    def width(self):
        return self.accum.shape[1]

    @property
    def height(self):
        return self.accum.shape[0]

    def mean(self):
        c = np.maximum(self.counts, 1).astype(np.float32)
        return self.accum / c[..., None]

    def clear_rect(self, x0, y0, x1, y1):
        self.accum[y0:y1, x0:x1] = 0.0
        self.counts[y0:y1, x0:x1] = 0

    def copy(self):
        return Framebuffer(self.accum.copy(), self.counts.copy())


def _scene_render_args(scene):
    tree = scene.bvh
    if tree is None:
        # placeholder arrays keep the kernel signature stable
        zb = np.zeros((1, 6))
        zm = np.zeros((1, 2), dtype=np.int64)
        zp = np.zeros(1, dtype=np.int64)
        z33 = np.zeros((1, 3, 3))
        z32 = np.zeros((1, 3, 2))
        z3 = np.zeros((1, 3))
        z6 = np.zeros((1, 6))
        z1 = np.zeros(1)
        tex = np.zeros((1, 1), dtype=np.uint16)
        alpha = np.zeros((1, 1, 4), dtype=np.float32)
        return (zb, zm, zp, z33, z33, z33, z33, z33, z3, z32, z6, z1,
                tex, 1, 1, 0.0, 0.0, alpha, 1, 1, False), False
    args = scene.kernel_args()
    (base, top, orig, odir, vnrm, gnrm, uvs, aabb, dbary,
     tex, texw, texh, ws, wb, alpha, aw, ah, has_alpha) = args
    return (tree.nodes_bounds, tree.nodes_meta, tree.prim_order,
            base, top, orig, odir, vnrm, gnrm, uvs, aabb, dbary,
            tex, texw, texh, ws, wb, alpha, aw, ah, has_alpha), True


def _material_args(scene):
    m = scene.description.material
    return (np.ascontiguousarray(m.diffuse), float(m.reflectivity),
            float(m.refractivity), float(m.ior))


def _light_args(scene):
    ls = scene.description.lights
    if not ls:
        return (np.zeros((0, 3)), np.zeros((0, 3)))
    return (np.ascontiguousarray([l.position for l in ls]),
            np.ascontiguousarray([l.intensity for l in ls]))


def render_region(scene, camera, fb, rect, spp, seed, jitter=True,
                  accumulate=False):
    """Re-render pixels inside rect against the current scene snapshot.

    Without accumulate the rect restarts from sample zero, making the
    result identical to the same pixels of a fresh full-frame render with
    the same seed (RNG streams are keyed per absolute pixel and sample
    index). With accumulate, spp more samples stack onto what is there.
    """
    x0, y0, x1, y1 = rect
    x0 = max(0, int(x0))
    y0 = max(0, int(y0))
    x1 = min(camera.width, int(x1))
    y1 = min(camera.height, int(y1))
    if x1 <= x0 or y1 <= y0:
        return fb
    if accumulate:
        start = int(fb.counts[y0:y1, x0:x1].min())
    else:
        fb.clear_rect(x0, y0, x1, y1)
        start = 0
    right, up, fwd = camera.basis()
    sargs, has_geom = _scene_render_args(scene)
    mat = _material_args(scene)
    lp, li = _light_args(scene)
    t_eps = 1e-6 * max(scene.scene_scale, 1e-9)
    n_off = 1.5 * scene.dt_world
    rk.render_rect_k(
        fb.accum, fb.counts, x0, y0, x1, y1,
        start, int(spp), int(seed),
        np.ascontiguousarray(camera.position), np.ascontiguousarray(right),
        np.ascontiguousarray(up), np.ascontiguousarray(fwd),
        camera.tan_half_fov, camera.width, camera.height,
        *sargs,
        scene.dt_world, bool(jitter), t_eps, n_off,
        *mat, lp, li,
        np.ascontiguousarray(scene.description.background),
        has_geom)
    return fb


def render_frame(scene, camera, spp, seed, jitter=True, fb=None,
                 accumulate=False):
    """Render the whole frame; returns the framebuffer."""
    if fb is None:
        fb = Framebuffer.empty(camera.width, camera.height)
    return render_region(scene, camera, fb,
                         (0, 0, camera.width, camera.height),
                         spp, seed, jitter, accumulate)


def dirty_rect_to_pixels(scene, camera, dirty_rect, pad=2):
    """Conservative pixel rect covering every prism whose UV footprint
    meets the dirty texel rect.

    Prism AABBs already include the full displacement reach, so projecting
    their corners bounds everything that can change on screen. Any corner
    behind the eye degrades to the full viewport.
    """
    faces = scene.faces_touching_uv_rect(dirty_rect)
    if faces.size == 0:
        return (0, 0, 0, 0)
    boxes = scene.prisms["aabb"][faces]
    corners = np.empty((faces.size * 8, 3))
    k = 0
    for sel in range(8):
        cx = boxes[:, 0] if sel & 1 == 0 else boxes[:, 3]
        cy = boxes[:, 1] if sel & 2 == 0 else boxes[:, 4]
        cz = boxes[:, 2] if sel & 4 == 0 else boxes[:, 5]
        corners[k:k + faces.size] = np.stack([cx, cy, cz], axis=1)
        k += faces.size
    pix, in_front = camera.project(corners)
    if not np.all(in_front):
        return (0, 0, camera.width, camera.height)
    x0 = int(np.floor(pix[:, 0].min())) - pad
    y0 = int(np.floor(pix[:, 1].min())) - pad
    x1 = int(np.ceil(pix[:, 0].max())) + pad
    y1 = int(np.ceil(pix[:, 1].max())) + pad
    x0 = max(0, min(camera.width, x0))
    x1 = max(0, min(camera.width, x1))
    y0 = max(0, min(camera.height, y0))
    y1 = max(0, min(camera.height, y1))
    if x1 <= x0 or y1 <= y0:
        return (0, 0, 0, 0)
    return (x0, y0, x1, y1)


# ---------------------------------------------------------------------------
# resolve and image output
# ---------------------------------------------------------------------------

def srgb_encode(linear):
    """Linear [0,1] -> sRGB [0,1]."""
    linear = np.clip(linear, 0.0, 1.0)
    lo = linear * 12.92
    hi = 1.055 * np.power(linear, 1.0 / 2.4, where=linear > 0,
                          out=np.zeros_like(linear)) - 0.055
    return np.where(linear <= 0.0031308, lo, hi)


def resolve(fb, exposure=1.0):
    """Accumulated linear mean -> 8-bit sRGB array (h, w, 3)."""
    img = srgb_encode(fb.mean() * exposure)
    return np.clip(img * 255.0 + 0.5, 0, 255).astype(np.uint8)


def write_pfm(path, data):
    """Write a (h, w, 3) float32 array as a little-endian color PFM."""
    data = np.asarray(data, dtype=np.float32)
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"PF\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.ascontiguousarray(data[::-1]).tobytes())


def read_pfm(path):
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"PF":
            raise ValueError("only color PF files are supported")
        w, h = (int(x) for x in fh.readline().split())
        scale = float(fh.readline())
        count = w * h * 3
        raw = fh.read(count * 4)
        fmt = "<" if scale < 0 else ">"
        data = np.array(struct.unpack(f"{fmt}{count}f", raw),
                        dtype=np.float32).reshape(h, w, 3)
        return data[::-1].copy()


def resolve_and_write(fb, path, fmt="png", exposure=1.0):
    """Write the framebuffer; fmt 'png' (8-bit sRGB) or 'pfm' (linear)."""
    if int(fb.counts.max(initial=0)) <= 0:
        raise ValueError("framebuffer has no samples")
    if fmt == "png":
        Image.fromarray(resolve(fb, exposure)).save(path)
    elif fmt == "pfm":
        write_pfm(path, fb.mean() * exposure)
    else:
        raise ValueError(f"unknown image format {fmt!r}")
