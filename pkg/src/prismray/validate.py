"""Property checks behind the `validate` CLI command.

Each check returns (name, passed, detail). They re-verify, at configurable
scale, the geometric guarantees the renderer depends on: fiber colinearity,
prism AABB containment, entry/exit interval correctness against a dense
march, displacement-range bounds, closed-surface watertightness and the
micro-tessellation agreement.
"""

import numpy as np
from numba import njit, prange

from . import kernels
from .oracle import TriangleSoup, tessellate_displaced

DEFAULT_RAYS = 10000


def _rng(seed):
    return np.random.default_rng(seed)


def random_dirichlet(rng, n):
    b = rng.dirichlet([1.0, 1.0, 1.0], size=n)
    return b


def check_colinearity(scene, n_prisms=20, n_samples=2000, seed=1,
                      tol=1e-9):
    """Fiber-map points must sit on the interpolated normal through the
    base point."""
    from .prism import shell_point, interpolated_normal
    rng = _rng(seed)
    worst = 0.0
    m = scene.n_prisms
    faces = rng.integers(0, m, size=min(n_prisms, m))
    for f in faces:
        pr = scene.prism(int(f))
        b = random_dirichlet(rng, n_samples)
        w = rng.uniform(0.0, pr.w_max, size=(n_samples, 2))
        for i in range(n_samples):
            p = b[i] @ pr.source_verts
            nrm = interpolated_normal(b[i], pr)
            for j in range(2):
                x = shell_point(b[i], w[i, j], pr)
                d = x - p
                dl = np.linalg.norm(d)
                if dl > 1e-12:
                    worst = max(worst, float(
                        np.linalg.norm(np.cross(d / dl, nrm))))
    return ("colinearity", worst < tol, f"worst residual {worst:.3g}")


def check_containment(scene, n_prisms=50, n_samples=10000, seed=2):
    """Swept-volume points must stay inside the prism AABB."""
    from .prism import prism_aabb
    rng = _rng(seed)
    m = scene.n_prisms
    faces = rng.integers(0, m, size=min(n_prisms, m))
    bad = 0
    for f in faces:
        pr = scene.prism(int(f))
        box = prism_aabb(pr)
        b = random_dirichlet(rng, n_samples)
        h = rng.uniform(-pr.w_neg, pr.w_max - pr.w_neg, size=n_samples)
        pts = np.einsum("ni,nij->nj", b,
                        pr.source_verts[None] + h[:, None, None]
                        * pr.offset_dirs[None])
        tol = 1e-9 * max(1.0, float(np.abs(box.max - box.min).max()))
        inside = np.all(pts >= box.min - tol, axis=1) \
            & np.all(pts <= box.max + tol, axis=1)
        bad += int(np.sum(~inside))
    return ("aabb containment", bad == 0, f"{bad} escaped points")


@njit(cache=True, parallel=True)
def _dense_classify_k(r0s, rds, t0s, t1s, steps, f, orig, odir, gnrm,
                      wneg, wmax, out_first, out_last):
    """First/last inside-t along each ray by brute-force point tests."""
    for i in prange(r0s.shape[0]):
        first = np.inf
        last = -np.inf
        dt = (t1s[i] - t0s[i]) / steps
        for k in range(steps + 1):
            t = t0s[i] + dt * k
            sx = r0s[i, 0] + rds[i, 0] * t
            sy = r0s[i, 1] + rds[i, 1] * t
            sz = r0s[i, 2] + rds[i, 2] * t
            h = (gnrm[f, 0] * (sx - orig[f, 0, 0])
                 + gnrm[f, 1] * (sy - orig[f, 0, 1])
                 + gnrm[f, 2] * (sz - orig[f, 0, 2]))
            if h < -wneg[f] or h > wmax[f] - wneg[f]:
                continue
            c0x = orig[f, 0, 0] + odir[f, 0, 0] * h
            c0y = orig[f, 0, 1] + odir[f, 0, 1] * h
            c0z = orig[f, 0, 2] + odir[f, 0, 2] * h
            c1x = orig[f, 1, 0] + odir[f, 1, 0] * h
            c1y = orig[f, 1, 1] + odir[f, 1, 1] * h
            c1z = orig[f, 1, 2] + odir[f, 1, 2] * h
            c2x = orig[f, 2, 0] + odir[f, 2, 0] * h
            c2y = orig[f, 2, 1] + odir[f, 2, 1] * h
            c2z = orig[f, 2, 2] + odir[f, 2, 2] * h
            # inline barycentric (kept independent of the kernel helper)
            x0x = c1x - c0x
            x0y = c1y - c0y
            x0z = c1z - c0z
            x1x = c2x - c0x
            x1y = c2y - c0y
            x1z = c2z - c0z
            x2x = sx - c0x
            x2y = sy - c0y
            x2z = sz - c0z
            d00 = x0x * x0x + x0y * x0y + x0z * x0z
            d01 = x0x * x1x + x0y * x1y + x0z * x1z
            d11 = x1x * x1x + x1y * x1y + x1z * x1z
            d20 = x2x * x0x + x2y * x0y + x2z * x0z
            d21 = x2x * x1x + x2y * x1y + x2z * x1z
            den = d00 * d11 - d01 * d01
            if np.abs(den) < 1e-18:
                continue
            inv = 1.0 / den
            by = (d11 * d20 - d01 * d21) * inv
            bz = (d00 * d21 - d01 * d20) * inv
            bx = 1.0 - by - bz
            if bx >= 0.0 and by >= 0.0 and bz >= 0.0:
                if t < first:
                    first = t
                if t > last:
                    last = t
        out_first[i] = first
        out_last[i] = last


def check_intervals(scene, n_prisms=20, rays_per_prism=100, steps=10000,
                    seed=3):
    """Entry/exit intervals vs dense inside/outside classification.

    The dense march samples the ray at wmax/steps spacing inside the
    prism's AABB window; the interval boundaries must agree within two
    sample spacings, and inside samples must never fall outside
    [t_min, t_max].
    """
    rng = _rng(seed)
    m = scene.n_prisms
    faces = rng.integers(0, m, size=min(n_prisms, m))
    p = scene.prisms
    worst = 0.0
    n_checked = 0
    n_mismatch = 0
    for f in faces:
        f = int(f)
        box = p["aabb"][f]
        center = 0.5 * (box[:3] + box[3:])
        radius = 0.5 * float(np.linalg.norm(box[3:] - box[:3]))
        origins = center + _unit_sphere(rng, rays_per_prism) * radius * 2.5
        targets = center + rng.uniform(-1, 1, size=(rays_per_prism, 3)) \
            * radius * 0.7
        dirs = targets - origins
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        # dense-march only the AABB slab window of each ray
        t0s, t1s, hits_box = _slab_windows(origins, dirs, box)
        first = np.empty(rays_per_prism)
        last = np.empty(rays_per_prism)
        _dense_classify_k(origins, dirs, t0s, t1s, steps, f,
                          p["orig"], p["odir"], p["gnrm"],
                          p["wneg"], p["wmax"], first, last)
        for i in range(rays_per_prism):
            if not hits_box[i]:
                continue
            spacing = (t1s[i] - t0s[i]) / steps
            status, t_lo, t_hi, _kind = kernels.prism_entry_exit_k(
                origins[i], dirs[i], f, p["base"], p["top"], p["gnrm"],
                p["aabb"], 0.0, np.inf)
            has_dense = np.isfinite(first[i])
            n_checked += 1
            if status == 0:
                if has_dense and last[i] - first[i] > 2.0 * spacing:
                    n_mismatch += 1
                continue
            if not has_dense:
                continue  # interval thinner than the sampling
            err = max(abs(t_lo - first[i]), abs(t_hi - last[i]))
            worst = max(worst, err)
            # the interval must cover every inside sample
            if first[i] < t_lo - 2.0 * spacing \
                    or last[i] > t_hi + 2.0 * spacing:
                n_mismatch += 1
    ok = n_mismatch == 0
    return ("entry/exit intervals", ok,
            f"{n_checked} rays, {n_mismatch} uncovered, "
            f"worst boundary offset {worst:.3g}")


def _slab_windows(origins, dirs, box, pad_rel=1e-3):
    """Per-ray [t0, t1] clipped to an AABB, slightly padded."""
    lo = box[:3][None]
    hi = box[3:][None]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(dirs != 0.0, 1.0 / np.where(dirs == 0.0, 1.0, dirs),
                       np.inf)
        ta = (lo - origins) * inv
        tb = (hi - origins) * inv
    tmin = np.minimum(ta, tb).max(axis=1)
    tmax = np.maximum(ta, tb).min(axis=1)
    hits = tmin <= tmax
    pad = pad_rel * np.maximum(tmax - tmin, 1e-12)
    t0 = np.where(hits, np.maximum(tmin - pad, 0.0), 0.0)
    t1 = np.where(hits, tmax + pad, 1.0)
    return t0, t1, hits


def check_bounds(scene):
    """Displacement range must fit every prism's offset budget."""
    if scene.n_prisms == 0:
        return ("displacement bounds", True, "no geometry")
    dm = scene.dispmap
    top = dm.world_bias + dm.world_scale
    budgets = scene.prisms["wmax"] - scene.prisms["wneg"]
    if scene.description.w_max_policy == "per_prism":
        # per-prism budgets bound each face's own peak by construction
        ok = bool(np.all(budgets > 0))
        return ("displacement bounds", ok, "per-prism budgets positive")
    ok = bool(top <= budgets.min() + 1e-12)
    return ("displacement bounds", ok,
            f"bias+scale = {top:.6g} vs min budget {budgets.min():.6g}")


def mesh_is_closed(mesh):
    """Geometric closedness: weld vertices by position (UV seams split
    indices), then check every edge has exactly two incident faces."""
    scale = max(float(np.abs(mesh.vertices).max()), 1e-12)
    q = np.round(mesh.vertices / scale * 1e9).astype(np.int64)
    _, welded = np.unique(q, axis=0, return_inverse=True)
    edges = {}
    for f in range(mesh.n_faces):
        for k in range(3):
            a = int(welded[mesh.faces[f, k]])
            b = int(welded[mesh.faces[f, (k + 1) % 3]])
            if a == b:
                continue  # pole fans collapse an edge
            key = (a, b) if a < b else (b, a)
            edges[key] = edges.get(key, 0) + 1
    return all(v == 2 for v in edges.values())


def check_watertight_spray(scene, n_rays=100000, seed=4):
    """Every ray aimed through a closed displaced surface must hit it."""
    if scene.mesh is None or not mesh_is_closed(scene.mesh):
        return ("surface watertightness", True,
                "skipped: mesh is not closed")
    if scene.dispmap.world_bias < scene.dt_world:
        return ("surface watertightness", True,
                "skipped: world_bias < dt (holes allowed)")
    rng = _rng(seed)
    center, radius = scene.mesh.bounding_sphere()
    # target points well inside the base mesh: rays must cross the surface
    origins = center + _unit_sphere(rng, n_rays) * radius * 3.0
    targets = center + _unit_sphere(rng, n_rays) \
        * rng.uniform(0.0, 0.3 * radius, size=(n_rays, 1))
    dirs = targets - origins
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    tree = scene.bvh
    hits = _spray_hits(origins, dirs, tree.nodes_bounds, tree.nodes_meta,
                       tree.prim_order, *scene.kernel_args(),
                       scene.dt_world)
    leaks = int(n_rays - hits.sum())
    return ("surface watertightness", leaks == 0,
            f"{leaks} leaks out of {n_rays} rays")


def _unit_sphere(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@njit(cache=True, parallel=True)
def _spray_hits(origins, dirs, nodes_bounds, nodes_meta, prim_order,
                base, top, orig, odir, vnrm, gnrm, uvs, aabb, dbary,
                tex, texw, texh, world_scale, world_bias,
                alpha, alphaw, alphah, has_alpha, dt):
    out = np.zeros(origins.shape[0], dtype=np.int64)
    for i in prange(origins.shape[0]):
        hit = np.empty(kernels.HIT_SIZE, dtype=np.float64)
        found = kernels.scene_closest_hit_bvh_k(
            origins[i], dirs[i], 0.0, np.inf,
            nodes_bounds, nodes_meta, prim_order,
            base, top, orig, odir, vnrm, gnrm, uvs, aabb, dbary,
            tex, texw, texh, world_scale, world_bias,
            alpha, alphaw, alphah, has_alpha, dt, 0.0, hit)
        if found:
            out[i] = 1
    return out


def pdm_hits_batch(scene, origins, dirs, jitters=None, dt=None,
                   use_bvh=True):
    """Closest-hit t per ray through the full displacement pipeline."""
    if jitters is None:
        jitters = np.zeros(origins.shape[0])
    out = np.empty(origins.shape[0], dtype=np.float64)
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    jitters = np.ascontiguousarray(jitters, dtype=np.float64)
    dt = scene.dt_world if dt is None else float(dt)
    if use_bvh:
        tree = scene.bvh
        _pdm_batch_k(origins, dirs, jitters,
                     tree.nodes_bounds, tree.nodes_meta, tree.prim_order,
                     *scene.kernel_args(), dt, out)
    else:
        _pdm_linear_batch_k(origins, dirs, jitters,
                            *scene.kernel_args(), dt, out)
    return out


@njit(cache=True, parallel=True)
def _pdm_batch_k(origins, dirs, jitters, nodes_bounds, nodes_meta,
                 prim_order,
                 base, top, orig, odir, vnrm, gnrm, uvs, aabb, dbary,
                 tex, texw, texh, world_scale, world_bias,
                 alpha, alphaw, alphah, has_alpha, dt, out):
    for i in prange(origins.shape[0]):
        hit = np.empty(kernels.HIT_SIZE, dtype=np.float64)
        found = kernels.scene_closest_hit_bvh_k(
            origins[i], dirs[i], 0.0, np.inf,
            nodes_bounds, nodes_meta, prim_order,
            base, top, orig, odir, vnrm, gnrm, uvs, aabb, dbary,
            tex, texw, texh, world_scale, world_bias,
            alpha, alphaw, alphah, has_alpha, dt, jitters[i], hit)
        out[i] = hit[kernels.HIT_T] if found else np.inf


@njit(cache=True, parallel=True)
def _pdm_linear_batch_k(origins, dirs, jitters,
                        base, top, orig, odir, vnrm, gnrm, uvs, aabb, dbary,
                        tex, texw, texh, world_scale, world_bias,
                        alpha, alphaw, alphah, has_alpha, dt, out):
    for i in prange(origins.shape[0]):
        hit = np.empty(kernels.HIT_SIZE, dtype=np.float64)
        found = kernels.scene_closest_hit_linear_k(
            origins[i], dirs[i], 0.0, np.inf,
            base, top, orig, odir, vnrm, gnrm, uvs, aabb, dbary,
            tex, texw, texh, world_scale, world_bias,
            alpha, alphaw, alphah, has_alpha, dt, jitters[i], hit)
        out[i] = hit[kernels.HIT_T] if found else np.inf


def oracle_rays(scene, n_rays, seed=5):
    """Random rays aimed at the bounding sphere from an enclosing shell."""
    rng = _rng(seed)
    center, radius = scene.mesh.bounding_sphere()
    origins = center + _unit_sphere(rng, n_rays) * radius * 3.0
    targets = center + _unit_sphere(rng, n_rays) \
        * (rng.uniform(0, 1, size=(n_rays, 1)) ** 0.5) * radius * 1.1
    dirs = targets - origins
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return origins, dirs


def check_oracle_agreement(scene, n_rays=DEFAULT_RAYS, samples=64, seed=5,
                           agreement=0.99, dt=None):
    """Hit/miss and |dt| agreement between the march and the tessellated
    ground truth."""
    dt = scene.dt_world if dt is None else dt
    origins, dirs = oracle_rays(scene, n_rays, seed)
    soup = TriangleSoup(tessellate_displaced(scene.mesh, scene.dispmap,
                                             samples))
    t_ref = soup.intersect_batch(origins, dirs)
    t_pdm = pdm_hits_batch(scene, origins, dirs, dt=dt)
    ref_hit = np.isfinite(t_ref)
    pdm_hit = np.isfinite(t_pdm)
    agree = ref_hit == pdm_hit
    both = ref_hit & pdm_hit
    dt_err = np.abs(t_ref[both] - t_pdm[both])
    frac_agree = float(np.mean(agree))
    max_err = float(dt_err.max()) if dt_err.size else 0.0
    t_ok = float(np.mean(dt_err <= 2.0 * dt)) if dt_err.size else 1.0
    passed = frac_agree >= agreement and t_ok >= agreement
    return ("tessellation oracle", passed,
            f"hit/miss agreement {frac_agree:.4f}, "
            f"|dt| <= 2dt for {t_ok:.4f} of hits "
            f"(max |dt| {max_err:.4g}, 2dt = {2 * dt:.4g})")


def run_all(scene, n_rays=DEFAULT_RAYS, seed=0):
    """The full table used by `prismray validate`."""
    rows = [
        check_bounds(scene),
        check_colinearity(scene, seed=seed + 1),
        check_containment(scene, seed=seed + 2),
        check_intervals(scene, seed=seed + 3,
                        n_prisms=10, rays_per_prism=50, steps=4000),
        check_watertight_spray(scene, n_rays=min(n_rays, 100000),
                               seed=seed + 4),
        check_oracle_agreement(scene, n_rays=n_rays, seed=seed + 5),
    ]
    return rows
