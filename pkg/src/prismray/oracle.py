"""Ground-truth reference: micro-tessellation of the displaced surface.

The displaced surface P(u,v) + D(u,v) * unit(N'(u,v)) is sampled on a
barycentric grid per base face and triangulated; rays are then traced
against the micro-triangle soup through a uniform grid. This path shares
no code with the marching kernel (it has its own map sampler and its own
acceleration), so agreement between the two is meaningful evidence.
"""

import numpy as np
from numba import njit, prange


def sample_map_bilinear(data, u, v, world_scale, world_bias):
    """Independent numpy bilinear sampler (clamp addressing), vectorized."""
    h, w = data.shape
    x = np.asarray(u) * w - 0.5
    y = np.asarray(v) * h - 0.5
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    fx = x - x0
    fy = y - y0
    ix0 = np.clip(x0, 0, w - 1)
    ix1 = np.clip(x0 + 1, 0, w - 1)
    iy0 = np.clip(y0, 0, h - 1)
    iy1 = np.clip(y0 + 1, 0, h - 1)
    d = data.astype(np.float64)
    val = ((d[iy0, ix0] * (1 - fx) + d[iy0, ix1] * fx) * (1 - fy)
           + (d[iy1, ix0] * (1 - fx) + d[iy1, ix1] * fx) * fy) / 65535.0
    return world_bias + val * world_scale


def _grid_indices(n):
    """Barycentric grid (i, j) with i + j <= n, plus the triangulation."""
    idx = {}
    pts = []
    for i in range(n + 1):
        for j in range(n + 1 - i):
            idx[(i, j)] = len(pts)
            pts.append((i, j))
    tris = []
    for i in range(n):
        for j in range(n - i):
            a = idx[(i, j)]
            b = idx[(i + 1, j)]
            c = idx[(i, j + 1)]
            tris.append((a, b, c))
            if i + j < n - 1:
                d = idx[(i + 1, j + 1)]
                tris.append((b, d, c))
    return np.asarray(pts, dtype=np.float64), np.asarray(tris, dtype=np.int64)


def tessellate_displaced(mesh, dispmap, samples=64):
    """Micro-triangle soup of the displaced surface.

    samples is the per-edge subdivision count; each base face yields
    samples^2 micro-triangles. Returns (k, 3, 3) vertex coordinates.
    """
    grid, tri_idx = _grid_indices(samples)
    b0 = grid[:, 0] / samples
    b1 = grid[:, 1] / samples
    b2 = 1.0 - b0 - b1
    bw = np.stack([b0, b1, b2], axis=1)          # (p, 3)

    out = []
    for f in range(mesh.n_faces):
        vid = mesh.faces[f]
        V = mesh.vertices[vid]                   # (3, 3)
        N = mesh.normals[vid]
        UV = mesh.uvs[vid]
        P = bw @ V                               # (p, 3)
        Nn = bw @ N
        Nn = Nn / np.linalg.norm(Nn, axis=1, keepdims=True)
        uv = bw @ UV
        D = sample_map_bilinear(dispmap.data, uv[:, 0], uv[:, 1],
                                dispmap.world_scale, dispmap.world_bias)
        S = P + D[:, None] * Nn
        out.append(S[tri_idx])                   # (t, 3, 3)
    return np.concatenate(out, axis=0)


@njit(cache=True, inline="always")
def _ray_tri(r0x, r0y, r0z, rdx, rdy, rdz,
             ax, ay, az, bx, by, bz, cx, cy, cz, t_near, t_far):
    e1x, e1y, e1z = bx - ax, by - ay, bz - az
    e2x, e2y, e2z = cx - ax, cy - ay, cz - az
    px = rdy * e2z - rdz * e2y
    py = rdz * e2x - rdx * e2z
    pz = rdx * e2y - rdy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if np.abs(det) < 1e-18:
        return -1.0
    inv = 1.0 / det
    tx, ty, tz = r0x - ax, r0y - ay, r0z - az
    u = (tx * px + ty * py + tz * pz) * inv
    if u < -1e-9 or u > 1.0 + 1e-9:
        return -1.0
    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (rdx * qx + rdy * qy + rdz * qz) * inv
    if v < -1e-9 or u + v > 1.0 + 1e-9:
        return -1.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t < t_near or t > t_far:
        return -1.0
    return t


class TriangleSoup:
    """Uniform-grid accelerated triangle soup for oracle queries."""

    def __init__(self, tris, resolution=None):
        tris = np.ascontiguousarray(tris, dtype=np.float64)
        if tris.ndim != 3 or tris.shape[1:] != (3, 3):
            raise ValueError("tris must be (k, 3, 3)")
        self.tris = tris
        lo = tris.min(axis=(0, 1))
        hi = tris.max(axis=(0, 1))
        pad = 1e-6 * max(float(np.max(hi - lo)), 1e-12)
        self.lo = lo - pad
        self.hi = hi + pad
        if resolution is None:
            resolution = int(np.clip(round(len(tris) ** (1 / 3)), 8, 96))
        self.res = resolution
        self.cell = (self.hi - self.lo) / self.res
        self._build()

    def _build(self):
        r = self.res
        tlo = self.tris.min(axis=1)
        thi = self.tris.max(axis=1)
        c0 = np.clip(((tlo - self.lo) / self.cell).astype(int), 0, r - 1)
        c1 = np.clip(((thi - self.lo) / self.cell).astype(int), 0, r - 1)
        spans = c1 - c0 + 1
        counts_per_tri = spans.prod(axis=1)
        total = int(counts_per_tri.sum())
        cell_of = np.empty(total, dtype=np.int64)
        tri_of = np.empty(total, dtype=np.int64)
        _fill_refs(c0, c1, r, cell_of, tri_of)
        order = np.argsort(cell_of, kind="stable")
        cell_sorted = cell_of[order]
        self.tri_ids = np.ascontiguousarray(tri_of[order])
        starts = np.searchsorted(cell_sorted, np.arange(r ** 3 + 1))
        self.cell_start = np.ascontiguousarray(starts.astype(np.int64))

    def intersect_batch(self, origins, dirs, t_near=0.0, t_far=np.inf,
                        with_tris=False):
        """Closest hit t per ray (inf on miss); optionally also the index
        of the micro-triangle hit (-1 on miss)."""
        origins = np.ascontiguousarray(origins, dtype=np.float64)
        dirs = np.ascontiguousarray(dirs, dtype=np.float64)
        out = np.empty(origins.shape[0], dtype=np.float64)
        out_tri = np.empty(origins.shape[0], dtype=np.int64)
        _soup_batch_k(origins, dirs, t_near, t_far,
                      self.tris, self.lo, self.hi, self.cell,
                      self.res, self.cell_start, self.tri_ids, out, out_tri)
        if with_tris:
            return out, out_tri
        return out

    def normals(self, tri_ids):
        """Unit geometric normals of micro-triangles (unsafe for -1)."""
        t = self.tris[tri_ids]
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        return n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True),
                              1e-300)

    def intersect(self, origin, direction, t_near=0.0, t_far=np.inf):
        t = self.intersect_batch(origin[None], direction[None],
                                 t_near, t_far)[0]
        return None if np.isinf(t) else float(t)


@njit(cache=True)
def _fill_refs(c0, c1, r, cell_of, tri_of):
    k = 0
    for t in range(c0.shape[0]):
        for z in range(c0[t, 2], c1[t, 2] + 1):
            for y in range(c0[t, 1], c1[t, 1] + 1):
                for x in range(c0[t, 0], c1[t, 0] + 1):
                    cell_of[k] = (z * r + y) * r + x
                    tri_of[k] = t
                    k += 1


@njit(cache=True, parallel=True)
def _soup_batch_k(origins, dirs, t_near, t_far, tris, lo, hi, cell, res,
                  cell_start, tri_ids, out, out_tri):
    for i in prange(origins.shape[0]):
        t, tri = _soup_one(origins[i], dirs[i], t_near, t_far, tris,
                           lo, hi, cell, res, cell_start, tri_ids)
        out[i] = t
        out_tri[i] = tri


@njit(cache=True)
def _soup_one(r0, rd, t_near, t_far, tris, lo, hi, cell, res,
              cell_start, tri_ids):
    # clip to the grid bounds
    t0 = t_near
    t1 = t_far
    for a in range(3):
        inv = 1.0 / rd[a] if rd[a] != 0.0 else np.inf
        x0 = (lo[a] - r0[a]) * inv
        x1 = (hi[a] - r0[a]) * inv
        if x0 > x1:
            x0, x1 = x1, x0
        t0 = max(t0, x0)
        t1 = min(t1, x1)
    if t0 > t1:
        return np.inf, -1

    eps = 1e-12
    t = t0 + eps
    px = r0[0] + rd[0] * t
    py = r0[1] + rd[1] * t
    pz = r0[2] + rd[2] * t
    ix = min(max(int((px - lo[0]) / cell[0]), 0), res - 1)
    iy = min(max(int((py - lo[1]) / cell[1]), 0), res - 1)
    iz = min(max(int((pz - lo[2]) / cell[2]), 0), res - 1)

    step_x = 1 if rd[0] > 0 else -1
    step_y = 1 if rd[1] > 0 else -1
    step_z = 1 if rd[2] > 0 else -1
    inv_x = 1.0 / rd[0] if rd[0] != 0.0 else np.inf
    inv_y = 1.0 / rd[1] if rd[1] != 0.0 else np.inf
    inv_z = 1.0 / rd[2] if rd[2] != 0.0 else np.inf
    nxb = lo[0] + (ix + (1 if step_x > 0 else 0)) * cell[0]
    nyb = lo[1] + (iy + (1 if step_y > 0 else 0)) * cell[1]
    nzb = lo[2] + (iz + (1 if step_z > 0 else 0)) * cell[2]
    tmax_x = (nxb - r0[0]) * inv_x if np.isfinite(inv_x) else np.inf
    tmax_y = (nyb - r0[1]) * inv_y if np.isfinite(inv_y) else np.inf
    tmax_z = (nzb - r0[2]) * inv_z if np.isfinite(inv_z) else np.inf
    tdx = np.abs(cell[0] * inv_x) if np.isfinite(inv_x) else np.inf
    tdy = np.abs(cell[1] * inv_y) if np.isfinite(inv_y) else np.inf
    tdz = np.abs(cell[2] * inv_z) if np.isfinite(inv_z) else np.inf

    best = np.inf
    best_tri = -1
    while True:
        c = (iz * res + iy) * res + ix
        s = cell_start[c]
        e = cell_start[c + 1]
        for k in range(s, e):
            tr = tri_ids[k]
            t_hit = _ray_tri(r0[0], r0[1], r0[2], rd[0], rd[1], rd[2],
                             tris[tr, 0, 0], tris[tr, 0, 1], tris[tr, 0, 2],
                             tris[tr, 1, 0], tris[tr, 1, 1], tris[tr, 1, 2],
                             tris[tr, 2, 0], tris[tr, 2, 1], tris[tr, 2, 2],
                             t_near, t_far)
            if t_hit >= 0.0 and t_hit < best:
                best = t_hit
                best_tri = tr
        t_exit = min(tmax_x, min(tmax_y, tmax_z))
        if best <= t_exit or t_exit > t1:
            return best, best_tri
        if tmax_x <= tmax_y and tmax_x <= tmax_z:
            ix += step_x
            tmax_x += tdx
            if ix < 0 or ix >= res:
                return best, best_tri
        elif tmax_y <= tmax_z:
            iy += step_y
            tmax_y += tdy
            if iy < 0 or iy >= res:
                return best, best_tri
        else:
            iz += step_z
            tmax_z += tdz
            if iz < 0 or iz >= res:
                return best, best_tri
