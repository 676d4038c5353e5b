"""The projective displacement marching kernel, Python-facing side.

A ray that enters a prism is advanced in steps of dt. At each sample a
scanning triangle (the offset triangle whose plane contains the sample) is
updated; barycentric coordinates of the sample within it project the sample
onto the base triangle, giving the texture location and the signed ray
height. The surface is crossed when the ray height falls to the sampled
map height; one linear interpolation refines the crossing. The first sample
may be jittered within one dt to integrate features thinner than the step.
"""

from dataclasses import dataclass
import json

import numpy as np

from . import kernels
from .intersect import prism_entry_exit


@dataclass
class HitRecord:
    t: float
    point: np.ndarray
    barycentric: np.ndarray
    uv: np.ndarray
    normal: np.ndarray       # corrected shading normal (unit)
    raw_normal: np.ndarray   # uncorrected displaced normal (unit)
    prism_id: int
    steps: int = 0           # samples allocated to the march
    flags: int = 0           # bit0 fd-flip, bit1 normal fallback

    @classmethod
    def from_buffer(cls, buf):
        return cls(
            t=float(buf[kernels.HIT_T]),
            point=buf[kernels.HIT_PX:kernels.HIT_PX + 3].copy(),
            barycentric=buf[kernels.HIT_B0:kernels.HIT_B0 + 3].copy(),
            uv=buf[kernels.HIT_U:kernels.HIT_U + 2].copy(),
            normal=buf[kernels.HIT_NX:kernels.HIT_NX + 3].copy(),
            raw_normal=buf[kernels.HIT_RNX:kernels.HIT_RNX + 3].copy(),
            prism_id=int(buf[kernels.HIT_FACE]),
            steps=int(buf[kernels.HIT_STEPS]),
            flags=int(buf[kernels.HIT_FLAGS]),
        )


def triangle_barycentric(s, c0, c1, c2):
    """Barycentric coordinates of s in triangle (c0, c1, c2): five dot
    products and one division. Raises on a degenerate triangle."""
    s = np.asarray(s, dtype=np.float64)
    c0 = np.asarray(c0, dtype=np.float64)
    c1 = np.asarray(c1, dtype=np.float64)
    c2 = np.asarray(c2, dtype=np.float64)
    b0, b1, b2, ok = kernels.triangle_barycentric_k(
        s[0], s[1], s[2], c0[0], c0[1], c0[2],
        c1[0], c1[1], c1[2], c2[0], c2[1], c2[2])
    if not ok:
        raise ValueError("degenerate triangle in barycentric projection")
    return np.array([b0, b1, b2])


@dataclass
class MarchState:
    """March bookkeeping exposed for tests and the trace dump."""
    t: float
    sample: np.ndarray
    scanning: np.ndarray     # (3, 3) current offset triangle
    h_ray: float
    h_surf: float
    dt: float


def advance_scanning_triangle(state, prism):
    """Pull the scanning triangle's plane onto the current sample.

    The plane's signed distance to the sample along the base geometric
    normal moves every corner by the same height (each offset direction has
    unit extent along the normal), keeping the triangle parallel.
    """
    g = prism.geo_normal
    dh = float(g @ (state.scanning[0] - state.sample))
    scanning = state.scanning - dh * prism.offset_dirs
    return MarchState(state.t, state.sample.copy(), scanning,
                      state.h_ray, state.h_surf, state.dt)


def interpolate_crossing(t_prev, dt, f_prev, f_curr):
    """Linear zero crossing of f = h_ray - h_surf across one step."""
    if not (f_prev > 0.0 >= f_curr):
        raise ValueError("interpolate_crossing needs f_prev > 0 >= f_curr")
    return t_prev + dt * f_prev / (f_prev - f_curr)


def _march_args(prism, dispmap, colormap_f32=None, dbary=None):
    orig = prism.source_verts[None].astype(np.float64)
    odir = prism.offset_dirs[None].astype(np.float64)
    vnrm = prism.vertex_normals[None].astype(np.float64)
    gnrm = prism.geo_normal[None].astype(np.float64)
    uvs = prism.uvs[None].astype(np.float64)
    if dbary is None:
        dbary = default_dbary(prism, dispmap)
    db = np.array([dbary], dtype=np.float64)
    if colormap_f32 is None:
        alpha = np.zeros((1, 1, 4), dtype=np.float32)
        has_alpha = False
        aw = ah = 1
    else:
        alpha = colormap_f32
        has_alpha = True
        ah, aw = alpha.shape[:2]
    return (np.ascontiguousarray(orig), np.ascontiguousarray(odir),
            np.ascontiguousarray(vnrm), np.ascontiguousarray(gnrm),
            np.ascontiguousarray(uvs), db,
            dispmap.data, dispmap.width, dispmap.height,
            dispmap.world_scale, dispmap.world_bias,
            alpha, aw, ah, has_alpha)


def default_dbary(prism, dispmap):
    """Finite-difference step: one texel converted to barycentric units,
    floored at 1e-4 (and capped well inside the triangle)."""
    uv = prism.uvs
    edge = max(np.linalg.norm(uv[0] - uv[2]), np.linalg.norm(uv[1] - uv[2]),
               np.linalg.norm(uv[0] - uv[1]))
    texel = 1.0 / max(dispmap.width, dispmap.height)
    if edge < 1e-12:
        return 1e-4
    return float(min(max(texel / edge, 1e-4), 0.1))


def march(ray, prism, dispmap, dt, jitter=0.0, colormap=None, interval=None):
    """March one prism; returns a HitRecord or None.

    jitter is the caller-supplied uniform variate in [0, 1) shifting the
    first sample after prism entry (0 reproduces the plain march). When a
    color map is given, crossings with alpha below 0.5 are cut out.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if interval is None:
        interval = prism_entry_exit(ray, prism)
    if interval is None:
        return None
    cmap = colormap.as_float() if colormap is not None else None
    args = _march_args(prism, dispmap, cmap)
    hit = np.empty(kernels.HIT_SIZE, dtype=np.float64)
    notrace = np.empty((0, 15), dtype=np.float64)
    inside = 1 if interval.entered_inside else 0
    status, _n = kernels.march_prism_k(
        np.ascontiguousarray(ray.origin), np.ascontiguousarray(ray.dir),
        interval.t_min, interval.t_max, 0, inside, *args, dt, float(jitter),
        hit, notrace)
    if status != kernels.MARCH_HIT:
        return None
    rec = HitRecord.from_buffer(hit)
    rec.prism_id = prism.face_id
    return rec


TRACE_FIELDS = ("t", "s", "c0", "c1", "c2", "h_ray", "h_surf")


def march_trace(ray, prism, dispmap, dt, jitter=0.0, colormap=None,
                max_steps=100000):
    """March with per-step records for debugging.

    Returns (hit_or_none, steps) where each step is a dict with keys t, s,
    c0..c2 (scanning triangle corners), h_ray and h_surf; json.dumps of a
    step is one line of the trace-dump format.
    """
    interval = prism_entry_exit(ray, prism)
    if interval is None:
        return None, []
    cmap = colormap.as_float() if colormap is not None else None
    args = _march_args(prism, dispmap, cmap)
    hit = np.empty(kernels.HIT_SIZE, dtype=np.float64)
    buf = np.empty((max_steps, 15), dtype=np.float64)
    inside = 1 if interval.entered_inside else 0
    status, n = kernels.march_prism_k(
        np.ascontiguousarray(ray.origin), np.ascontiguousarray(ray.dir),
        interval.t_min, interval.t_max, 0, inside, *args, dt, float(jitter),
        hit, buf)
    steps = []
    for i in range(n):
        r = buf[i]
        steps.append({
            "t": float(r[0]),
            "s": [float(r[1]), float(r[2]), float(r[3])],
            "c0": [float(r[4]), float(r[5]), float(r[6])],
            "c1": [float(r[7]), float(r[8]), float(r[9])],
            "c2": [float(r[10]), float(r[11]), float(r[12])],
            "h_ray": float(r[13]),
            "h_surf": float(r[14]),
        })
    rec = None
    if status == kernels.MARCH_HIT:
        rec = HitRecord.from_buffer(hit)
        rec.prism_id = prism.face_id
    return rec, steps


def trace_to_jsonl(steps, prism_id=None):
    lines = []
    for k, s in enumerate(steps):
        row = {"step": k, **s}
        if prism_id is not None:
            row = {"prism": int(prism_id), **row}
        lines.append(json.dumps(row))
    return "\n".join(lines)


def displaced_normal(b, prism, dispmap, dbary):
    """Finite-difference displaced-surface normal at barycentric b.

    All three probe points share the interpolated unit normal at b, so the
    limit is the exact normal of the frozen-normal surface patch; the
    orientation matches the base geometric normal for a constant map.
    Returns (unit normal, flipped) where flipped notes a one-sided
    perturbation forced by the triangle border.
    """
    if dbary <= 0.0:
        raise ValueError("dbary must be positive")
    orig = prism.source_verts[None].astype(np.float64)
    vnrm = prism.vertex_normals[None].astype(np.float64)
    uvs = prism.uvs[None].astype(np.float64)
    out = np.empty(3, dtype=np.float64)
    flipped = kernels.displaced_normal_k(
        0, float(b[0]), float(b[1]), float(b[2]), float(dbary),
        np.ascontiguousarray(orig), np.ascontiguousarray(vnrm),
        np.ascontiguousarray(uvs),
        dispmap.data, dispmap.width, dispmap.height,
        dispmap.world_scale, dispmap.world_bias, out)
    n = np.linalg.norm(out)
    if n < 1e-300:
        return prism.geo_normal.copy(), bool(flipped)
    return out / n, bool(flipped)


def correct_normal(n_s, n_g, n_interp):
    """Swap the flat geometric normal inside a displaced normal for the
    interpolated one: normalize(normalize(n_s) - n_g + n_interp).

    Falls back to the interpolated normal if the correction cancels to
    zero; returns (unit normal, fell_back).
    """
    n_s = np.asarray(n_s, dtype=np.float64)
    ns_len = np.linalg.norm(n_s)
    if ns_len < 1e-300:
        return np.asarray(n_interp, dtype=np.float64).copy(), True
    v = n_s / ns_len - np.asarray(n_g) + np.asarray(n_interp)
    vlen = np.linalg.norm(v)
    if vlen < 1e-12:
        return np.asarray(n_interp, dtype=np.float64).copy(), True
    return v / vlen, False
