"""Parallel offset prism construction.

Each base triangle is extruded along per-vertex offset vectors
o_i = N_i / (N_i . N_g). Because N_g . o_i == 1 at every corner, every
offset triangle v_i + h * o_i lies in a plane parallel to the base at
height h: world samples map linearly to texture space. The prism boundary
is the bottom and top triangles plus three bilinear side patches.
"""

from dataclasses import dataclass

import numpy as np

EPS_CREASE = float(np.sin(np.radians(5.0)))
WMAX_PAD = 1e-3
DEFAULT_WMAX_FRACTION = 0.05   # of the mesh bounding-sphere radius


class PrismError(ValueError):
    """Prism construction failure (crease singularity, bad arguments)."""


@dataclass
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def contains(self, p, tol=0.0):
        return bool(np.all(p >= self.min - tol) and
                    np.all(p <= self.max + tol))


@dataclass
class Prism:
    """One extruded triangle; when w_neg > 0 the stored base verts sit
    below the source triangle and w_max covers the whole shell span."""
    base_verts: np.ndarray      # (3, 3) marching-shell bottom
    top_extents: np.ndarray     # (3, 3)
    offset_dirs: np.ndarray     # (3, 3) N_i / (N_i . N_g), unnormalized
    vertex_normals: np.ndarray  # (3, 3) unit
    geo_normal: np.ndarray      # (3,) unit
    uvs: np.ndarray             # (3, 2)
    w_max: float                # full shell span
    w_neg: float                # part of the span below the source triangle
    face_id: int

    @property
    def source_verts(self):
        """The original base triangle (displacement zero level)."""
        return self.base_verts + self.w_neg * self.offset_dirs


def normal_factor(b, prism):
    """Offset scaling at barycentric b: sum of b_i / (N_i . N_g).

    Always >= 1 since each dot product is at most 1.
    """
    b = np.asarray(b, dtype=np.float64)
    d = prism.vertex_normals @ prism.geo_normal
    return float(np.sum(b / d))


def interpolated_normal(b, prism, normalized=True):
    b = np.asarray(b, dtype=np.float64)
    n = b @ prism.vertex_normals
    if normalized:
        n = n / np.linalg.norm(n)
    return n


def shell_point(b, w, prism):
    """Point at offset parameter w along the displaced-surface fiber.

    The fiber through base point P(b) runs along the interpolated unit
    normal, scaled by the normal factor; a displacement value D lands at
    shell_point(b, D). Fibers at two different w values are colinear with
    the interpolated normal by construction.
    """
    b = np.asarray(b, dtype=np.float64)
    p = b @ prism.source_verts
    return p + w * normal_factor(b, prism) * interpolated_normal(b, prism)


def sweep_point(b, h, prism):
    """Point of the swept prism volume: the offset triangle at height h
    above the source plane, interpolated at barycentric b."""
    b = np.asarray(b, dtype=np.float64)
    corners = prism.source_verts + h * prism.offset_dirs
    return b @ corners


def build_prism(mesh, face, w_max, w_neg=0.0):
    """Construct the parallel offset prism over one face.

    With w_neg > 0 the stored bottom face shifts down by w_neg along the
    offset directions and w_max grows to cover the full span, so the
    marching shell spans [-w_neg, +w_max] around the source triangle.
    """
    if w_max <= 0.0:
        raise PrismError("w_max must be positive")
    if w_neg < 0.0:
        raise PrismError("w_neg must be non-negative")
    f = mesh.faces[face]
    v = mesh.vertices[f].astype(np.float64)
    n = mesh.normals[f].astype(np.float64)
    uv = mesh.uvs[f].astype(np.float64)
    e1 = v[1] - v[0]
    e2 = v[2] - v[0]
    g = np.cross(e1, e2)
    glen = np.linalg.norm(g)
    if glen < 1e-300:
        raise PrismError(f"face {face} is degenerate")
    g = g / glen
    d = n @ g
    if np.any(d <= EPS_CREASE):
        raise PrismError(
            f"face {face}: vertex normal nearly tangent to the face "
            f"(min N.Ng = {d.min():.4g}); run split_crease_edges first")
    o = n / d[:, None]
    span = w_max + w_neg
    base = v - w_neg * o
    top = base + span * o
    return Prism(base, top, o, n, g, uv, float(span), float(w_neg),
                 int(face))


def prism_aabb(prism):
    """Smallest box over the six corners; the side patches stay inside the
    convex hull of their control points, so this bounds the whole prism."""
    pts = np.vstack([prism.base_verts, prism.top_extents])
    return Aabb(pts.min(axis=0).copy(), pts.max(axis=0).copy())


def per_prism_wmax(mesh, face, dispmap):
    """Conservative displacement bound over one face's UV triangle.

    Texel cells overlapping the triangle contribute the max of their four
    corner texels (the bilinear maximum over a cell); the resulting world
    height is padded by a small epsilon. UV coordinates outside [0,1]^2 are
    clamped, mirroring the sampler's clamp addressing.
    """
    f = mesh.faces[face]
    uv = np.clip(mesh.uvs[f].astype(np.float64), 0.0, 1.0)
    w, h = dispmap.width, dispmap.height
    # texel-space triangle; sample grid points are texel centers at
    # integer+0.5, so cell (i,j) spans [i-0.5, i+0.5] around center i
    tri = uv * np.array([w, h]) - 0.5
    lo = np.floor(tri.min(axis=0)).astype(int)
    hi = np.ceil(tri.max(axis=0)).astype(int)
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, [w - 1, h - 1])
    if np.any(hi < lo):
        # triangle collapsed outside the clamped domain
        ix = np.clip(np.round(tri[0, 0]).astype(int), 0, w - 1)
        iy = np.clip(np.round(tri[0, 1]).astype(int), 0, h - 1)
        peak = float(dispmap.data[iy, ix]) / 65535.0
    else:
        xs = np.arange(lo[0], hi[0] + 1)
        ys = np.arange(lo[1], hi[1] + 1)
        gx, gy = np.meshgrid(xs, ys)
        overlap = _cells_overlap_triangle(gx.ravel(), gy.ravel(), tri)
        if not np.any(overlap):
            peak = 0.0
        else:
            cx = gx.ravel()[overlap]
            cy = gy.ravel()[overlap]
            x1 = np.minimum(cx + 1, w - 1)
            y1 = np.minimum(cy + 1, h - 1)
            data = dispmap.data
            corners = np.maximum.reduce([
                data[cy, cx], data[cy, x1], data[y1, cx], data[y1, x1]])
            peak = float(corners.max()) / 65535.0
    world = dispmap.world_bias + peak * dispmap.world_scale
    return max(world, 0.0) * (1.0 + WMAX_PAD)


def _cells_overlap_triangle(cx, cy, tri):
    """2D triangle / unit-cell overlap via separating axes.

    Cell (i, j) spans [i, i+1] x [j, j+1] in grid coordinates; tri is a
    (3, 2) array in the same coordinates.
    """
    n = cx.shape[0]
    ok = np.ones(n, dtype=bool)
    # cell box vs triangle bbox
    tmin = tri.min(axis=0)
    tmax = tri.max(axis=0)
    ok &= (cx + 1 >= tmin[0]) & (cx <= tmax[0])
    ok &= (cy + 1 >= tmin[1]) & (cy <= tmax[1])
    # triangle edge normals
    for k in range(3):
        a = tri[k]
        b = tri[(k + 1) % 3]
        # inward normal for CCW or CW consistently: orient by third vertex
        nx, ny = -(b[1] - a[1]), (b[0] - a[0])
        c = tri[(k + 2) % 3]
        side = nx * (c[0] - a[0]) + ny * (c[1] - a[1])
        if side < 0:
            nx, ny = -nx, -ny
        # most-inward corner of each cell along (nx, ny)
        px = cx + (nx > 0)
        py = cy + (ny > 0)
        ok &= (nx * (px - a[0]) + ny * (py - a[1])) >= 0
    return ok


def default_wmax(mesh):
    """Scale-relative default offset distance."""
    _, r = mesh.bounding_sphere()
    return DEFAULT_WMAX_FRACTION * r


def build_prism_arrays(mesh, w_max, w_neg=0.0):
    """Vectorized construction of all prisms as structure-of-arrays.

    w_max may be a scalar (global policy) or a per-face array. Returns a
    dict of arrays matching the kernel signatures.
    """
    faces = mesh.faces
    m = faces.shape[0]
    v = mesh.vertices[faces].astype(np.float64)        # (m, 3, 3)
    n = mesh.normals[faces].astype(np.float64)
    uv = mesh.uvs[faces].astype(np.float64)
    e1 = v[:, 1] - v[:, 0]
    e2 = v[:, 2] - v[:, 0]
    g = np.cross(e1, e2)
    glen = np.linalg.norm(g, axis=1, keepdims=True)
    if np.any(glen < 1e-300):
        raise PrismError("degenerate face in mesh")
    g = g / glen
    d = np.einsum("mij,mj->mi", n, g)
    if np.any(d <= EPS_CREASE):
        bad = int(np.argwhere(d <= EPS_CREASE)[0][0])
        raise PrismError(
            f"face {bad}: vertex normal nearly tangent to the face "
            f"(min N.Ng = {d.min():.4g}); run split_crease_edges first")
    o = n / d[:, :, None]
    wm = np.broadcast_to(np.asarray(w_max, dtype=np.float64), (m,)).copy()
    if np.any(wm <= 0.0):
        raise PrismError("w_max must be positive for every face")
    span = wm + w_neg
    base = v - w_neg * o
    top = base + span[:, None, None] * o
    corners = np.concatenate([base, top], axis=1)      # (m, 6, 3)
    aabb = np.concatenate([corners.min(axis=1), corners.max(axis=1)],
                          axis=1)                      # (m, 6)
    return {
        "base": np.ascontiguousarray(base),
        "orig": np.ascontiguousarray(v),
        "top": np.ascontiguousarray(top),
        "odir": np.ascontiguousarray(o),
        "vnrm": np.ascontiguousarray(n),
        "gnrm": np.ascontiguousarray(g),
        "uvs": np.ascontiguousarray(uv),
        "wmax": np.ascontiguousarray(span),
        "wneg": np.full(m, float(w_neg)),
        "aabb": np.ascontiguousarray(aabb),
    }


def prism_from_arrays(arrays, face):
    """Single-prism view over the SoA build (for tests and tools)."""
    return Prism(
        base_verts=arrays["base"][face].copy(),
        top_extents=arrays["top"][face].copy(),
        offset_dirs=arrays["odir"][face].copy(),
        vertex_normals=arrays["vnrm"][face].copy(),
        geo_normal=arrays["gnrm"][face].copy(),
        uvs=arrays["uvs"][face].copy(),
        w_max=float(arrays["wmax"][face]),
        w_neg=float(arrays["wneg"][face]),
        face_id=int(face),
    )
