"""16-bit displacement map storage, sampling, brush edits and PNG I/O.

Renders read immutable snapshots; brush edits go to a working copy that the
edit session publishes between frames (single-writer / multi-reader), so a
frame never sees a torn texture.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from PIL import Image

from .kernels import sample_bilinear_k

BLEND_MODES = ("add", "max", "smooth")


@dataclass(frozen=True)
class DirtyRect:
    """Half-open texel rectangle [x0, x1) x [y0, y1)."""
    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def empty(self):
        return self.x1 <= self.x0 or self.y1 <= self.y0

    @property
    def width(self):
        return max(0, self.x1 - self.x0)

    @property
    def height(self):
        return max(0, self.y1 - self.y0)

    def union(self, other):
        if self.empty:
            return other
        if other.empty:
            return self
        return DirtyRect(min(self.x0, other.x0), min(self.y0, other.y0),
                         max(self.x1, other.x1), max(self.y1, other.y1))

    def intersect(self, other):
        return DirtyRect(max(self.x0, other.x0), max(self.y0, other.y0),
                         min(self.x1, other.x1), min(self.y1, other.y1))


@dataclass
class DisplacementMap:
    """Row-major, top-down grid of 16-bit normalized heights.

    Sampled world height = world_bias + texel/65535 * world_scale, so the
    reachable range is [world_bias, world_bias + world_scale]. Addressing
    clamps to the border (UV atlases must not wrap across charts).
    """
    data: np.ndarray           # (h, w) uint16
    world_scale: float
    world_bias: float = 0.0

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.uint16)

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def full_rect(self):
        return DirtyRect(0, 0, self.width, self.height)

    def copy(self):
        return DisplacementMap(self.data.copy(), self.world_scale,
                               self.world_bias)

    @classmethod
    def constant(cls, width, height, value, world_scale, world_bias=0.0):
        """Uniform map; value is the normalized height in [0, 1]."""
        t = np.full((height, width), int(round(value * 65535.0)),
                    dtype=np.uint16)
        return cls(t, world_scale, world_bias)


def sample_bilinear(dispmap, uv):
    """World height at uv via bilinear interpolation of texel centers."""
    u, v = float(uv[0]), float(uv[1])
    return float(sample_bilinear_k(
        dispmap.data, dispmap.width, dispmap.height, u, v,
        dispmap.world_scale, dispmap.world_bias))


def region_max(dispmap, rect):
    """Maximum normalized texel value over a texel rectangle."""
    r = rect.intersect(dispmap.full_rect)
    if r.empty:
        return 0.0
    return float(dispmap.data[r.y0:r.y1, r.x0:r.x1].max()) / 65535.0


@dataclass
class Brush:
    """Radial brush blended into the displacement (and optionally color).

    strength in [-1, 1] scales a smoothstep falloff; mode selects how the
    profile combines with existing texels.
    """
    radius: int
    strength: float
    mode: str = "add"
    color: Optional[np.ndarray] = None   # RGBA floats in [0,1]
    falloff: str = "smooth"              # "smooth" | "hard"

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError("brush radius must be >= 1 texel")
        if not np.isfinite(self.strength):
            raise ValueError("brush strength must be finite")
        if self.mode not in BLEND_MODES:
            raise ValueError(f"unknown blend mode {self.mode!r}")

    def profile(self, dist):
        """Falloff in [0, 1] for texel distances (vectorized)."""
        x = np.clip(1.0 - dist / float(self.radius), 0.0, 1.0)
        if self.falloff == "hard":
            return (dist <= self.radius).astype(np.float64)
        return x * x * (3.0 - 2.0 * x)


def apply_brush(dispmap, center_uv, brush, pressure=1.0):
    """Blend one brush dab centered at center_uv into the map in place.

    Returns the affected DirtyRect (clipped to the map). The rect is
    reported even when the edit had no numeric effect (strength 0) so
    callers can keep their invalidation logic uniform.
    """
    w, h = dispmap.width, dispmap.height
    cx = float(center_uv[0]) * w - 0.5
    cy = float(center_uv[1]) * h - 0.5
    r = brush.radius
    x0 = int(np.floor(cx - r))
    y0 = int(np.floor(cy - r))
    x1 = int(np.ceil(cx + r)) + 1
    y1 = int(np.ceil(cy + r)) + 1
    rect = DirtyRect(x0, y0, x1, y1).intersect(dispmap.full_rect)
    if rect.empty:
        return rect

    ys, xs = np.mgrid[rect.y0:rect.y1, rect.x0:rect.x1]
    dist = np.hypot(xs - cx, ys - cy)
    fall = brush.profile(dist)
    amount = brush.strength * float(np.clip(pressure, 0.0, 1.0)) * fall

    tile = dispmap.data[rect.y0:rect.y1, rect.x0:rect.x1].astype(np.float64)
    if brush.mode == "add":
        tile = tile + amount * 65535.0
    elif brush.mode == "max":
        tile = np.maximum(tile, amount * 65535.0)
    else:  # smooth: pull toward the local 3x3 mean
        full = dispmap.data.astype(np.float64)
        acc = np.zeros_like(tile)
        cnt = np.zeros_like(tile)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                yy = np.clip(ys + dy, 0, h - 1)
                xx = np.clip(xs + dx, 0, w - 1)
                acc += full[yy, xx]
                cnt += 1.0
        mean = acc / cnt
        tile = tile + np.abs(amount) * (mean - tile)
    dispmap.data[rect.y0:rect.y1, rect.x0:rect.x1] = \
        np.clip(np.round(tile), 0, 65535).astype(np.uint16)
    return rect


@dataclass
class ColorMap:
    """RGBA8 color/opacity texture; alpha 0 marks cut-outs."""
    data: np.ndarray   # (h, w, 4) uint8

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.uint8)
        if self.data.ndim != 3 or self.data.shape[2] != 4:
            raise ValueError("color map must be (h, w, 4) RGBA")

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]

    def as_float(self):
        """(h, w, 4) float32 in [0, 1] for the sampling kernels."""
        return np.ascontiguousarray(self.data.astype(np.float32) / 255.0)

    def copy(self):
        return ColorMap(self.data.copy())


def apply_color_brush(colormap, center_uv, brush, pressure=1.0):
    """Blend the brush color into the color map over the same footprint."""
    if brush.color is None:
        return DirtyRect(0, 0, 0, 0)
    w, h = colormap.width, colormap.height
    cx = float(center_uv[0]) * w - 0.5
    cy = float(center_uv[1]) * h - 0.5
    r = brush.radius
    rect = DirtyRect(int(np.floor(cx - r)), int(np.floor(cy - r)),
                     int(np.ceil(cx + r)) + 1, int(np.ceil(cy + r)) + 1)
    rect = rect.intersect(DirtyRect(0, 0, w, h))
    if rect.empty:
        return rect
    ys, xs = np.mgrid[rect.y0:rect.y1, rect.x0:rect.x1]
    fall = brush.profile(np.hypot(xs - cx, ys - cy)) \
        * float(np.clip(pressure, 0.0, 1.0))
    tile = colormap.data[rect.y0:rect.y1, rect.x0:rect.x1].astype(np.float64)
    col = np.asarray(brush.color, dtype=np.float64) * 255.0
    tile = tile + fall[..., None] * (col[None, None, :] - tile)
    colormap.data[rect.y0:rect.y1, rect.x0:rect.x1] = \
        np.clip(np.round(tile), 0, 255).astype(np.uint8)
    return rect


# ---------------------------------------------------------------------------
# PNG I/O
# ---------------------------------------------------------------------------

def load_displacement_png(path, world_scale, world_bias=0.0):
    """Read a 16-bit single-channel PNG as a DisplacementMap."""
    img = Image.open(path)
    arr = np.array(img)
    if arr.ndim != 2:
        raise ValueError(f"{path}: displacement PNG must be single-channel")
    if arr.dtype == np.uint8:
        arr = arr.astype(np.uint16) * 257   # widen 8-bit sources
    return DisplacementMap(arr.astype(np.uint16), world_scale, world_bias)


def save_displacement_png(dispmap, path):
    Image.fromarray(dispmap.data).save(path)


def load_color_png(path):
    img = Image.open(path).convert("RGBA")
    return ColorMap(np.array(img))


def save_color_png(colormap, path):
    Image.fromarray(colormap.data).save(path)
