"""Ray / prism boundary intersection.

A prism is bounded by its bottom and top triangles plus three bilinear side
patches. Boundary hits classify by the sign of n_p . r_d: exits raise t_max,
entries lower t_min; a set t_max with no entry means the ray started inside.
The resulting [t_min, t_max] interval bounds the displacement march.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import (ENTRY_TOP, ENTRY_BOTTOM, ENTRY_PATCH0, ENTRY_PATCH1,
                      ENTRY_PATCH2, ENTRY_INSIDE)

ENTRY_KIND_NAMES = {
    ENTRY_TOP: "top",
    ENTRY_BOTTOM: "bottom",
    ENTRY_PATCH0: "patch0",
    ENTRY_PATCH1: "patch1",
    ENTRY_PATCH2: "patch2",
    ENTRY_INSIDE: "inside",
}


@dataclass
class Ray:
    origin: np.ndarray
    dir: np.ndarray          # unit
    t_near: float = 0.0
    t_far: float = np.inf

    def __post_init__(self):
        self.origin = np.ascontiguousarray(self.origin, dtype=np.float64)
        self.dir = np.ascontiguousarray(self.dir, dtype=np.float64)
        n = np.linalg.norm(self.dir)
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"ray direction must be unit length (got {n})")
        if not self.t_near < self.t_far:
            raise ValueError("require t_near < t_far")

    def at(self, t):
        return self.origin + t * self.dir


@dataclass
class IntervalHit:
    t_min: float
    t_max: float
    entered_inside: bool
    entry_kind: str


@dataclass
class PatchHit:
    t: float
    normal: np.ndarray       # unnormalized dq/da x dq/db
    alpha: float
    beta: float


def ray_bilinear_patch(ray, q00, q10, q11, q01):
    """All intersections (up to two) with the bilinear patch through the
    four corners, ordered q00 -> q10 along one edge and q01 -> q11 along
    the opposite edge."""
    out = np.empty((2, 8), dtype=np.float64)
    n = kernels.ray_bilinear_patch_k(
        np.ascontiguousarray(ray.origin), np.ascontiguousarray(ray.dir),
        np.ascontiguousarray(q00, dtype=np.float64),
        np.ascontiguousarray(q10, dtype=np.float64),
        np.ascontiguousarray(q01, dtype=np.float64),
        np.ascontiguousarray(q11, dtype=np.float64),
        ray.t_near, ray.t_far, out)
    hits = [PatchHit(float(out[i, 0]), out[i, 1:4].copy(),
                     float(out[i, 4]), float(out[i, 5])) for i in range(n)]
    hits.sort(key=lambda h: h.t)
    return hits


def _single_prism_arrays(prism):
    base = prism.base_verts[None].astype(np.float64)
    top = prism.top_extents[None].astype(np.float64)
    gn = prism.geo_normal[None].astype(np.float64)
    corners = np.vstack([prism.base_verts, prism.top_extents])
    aabb = np.concatenate([corners.min(axis=0),
                           corners.max(axis=0)])[None]
    return (np.ascontiguousarray(base), np.ascontiguousarray(top),
            np.ascontiguousarray(gn), np.ascontiguousarray(aabb))


def prism_entry_exit(ray, prism):
    """Marching interval of the ray through one prism, or None on a miss."""
    base, top, gn, aabb = _single_prism_arrays(prism)
    status, t_min, t_max, kind = kernels.prism_entry_exit_k(
        np.ascontiguousarray(ray.origin), np.ascontiguousarray(ray.dir),
        0, base, top, gn, aabb, ray.t_near, ray.t_far)
    if status == 0:
        return None
    return IntervalHit(float(t_min), float(t_max),
                       kind == ENTRY_INSIDE, ENTRY_KIND_NAMES[int(kind)])
