"""Acceptance suite: one test per release criterion.

Each test prints a single [PASS]/[FAIL]/[INFO] line (run with -s or look at
captured output). Tolerances are fixed here, not tuned at runtime. The perf
smoke (criterion 12) is informative and never gates.
"""

import copy
import time

import numpy as np
import pytest

import prismray as pr
from prismray import demo, kernels
from prismray import validate as val
from prismray.intersect import Ray, prism_entry_exit
from prismray.march import correct_normal, displaced_normal
from prismray.oracle import TriangleSoup, tessellate_displaced
from prismray.render import Camera
from prismray.service import EditSession, StrokeEvent


def report(name, ok, detail):
    mark = "PASS" if ok else "FAIL"
    print(f"[{mark}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def orb(tmp_path_factory):
    """The criterion-1 scene: 180-triangle sphere, smooth 128^2 map,
    dt = 0.002 x scene scale."""
    d = tmp_path_factory.mktemp("orb")
    return demo.demo_sphere_scene(d)


@pytest.fixture(scope="module")
def orb_soup(orb):
    return TriangleSoup(tessellate_displaced(orb.mesh, orb.dispmap, 64))


def test_c01_tessellation_oracle_agreement(orb, orb_soup):
    t0 = time.perf_counter()
    n_rays = 10000
    origins, dirs = val.oracle_rays(orb, n_rays, seed=5)
    t_ref = orb_soup.intersect_batch(origins, dirs)
    t_pdm = val.pdm_hits_batch(orb, origins, dirs)
    ref_hit = np.isfinite(t_ref)
    pdm_hit = np.isfinite(t_pdm)
    agree = float(np.mean(ref_hit == pdm_hit))
    both = ref_hit & pdm_hit
    err = np.abs(t_ref[both] - t_pdm[both])
    tol = 2.0 * orb.dt_world
    t_ok = float(np.mean(err <= tol))
    elapsed = time.perf_counter() - t0
    ok = agree >= 0.99 and t_ok >= 0.99 and elapsed < 300.0
    report("criterion 1 (tessellation-oracle equivalence)", ok,
           f"hit/miss agreement {agree:.4f} (>=0.99), |dt|<=2dt for "
           f"{t_ok:.4f} of {int(both.sum())} hits (tol {tol:.4g}), "
           f"{elapsed:.1f}s")


def test_c02_fiber_colinearity(orb):
    rng = np.random.default_rng(101)
    n_prisms = 12
    n_samples = 100000
    worst = 0.0
    faces = rng.integers(0, orb.n_prisms, size=n_prisms)
    for f in faces:
        prism = orb.prism(int(f))
        b = rng.dirichlet([1.0, 1.0, 1.0], size=n_samples)
        w = rng.uniform(0.0, prism.w_max, size=n_samples)
        p = b @ prism.source_verts
        nrm = b @ prism.vertex_normals
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        nf = np.sum(b / (prism.vertex_normals @ prism.geo_normal), axis=1)
        x = p + (w * nf)[:, None] * nrm
        d = x - p
        dl = np.linalg.norm(d, axis=1)
        good = dl > 1e-14
        res = np.linalg.norm(np.cross(d[good] / dl[good, None], nrm[good]),
                             axis=1)
        worst = max(worst, float(res.max()))
    ok = worst < 1e-9
    report("criterion 2 (offset-fiber colinearity)", ok,
           f"worst residual {worst:.3g} over {n_prisms}x{n_samples} "
           "samples (< 1e-9)")


def test_c03_analytic_normal_oracles(tri_mesh):
    from tests.test_normals import (analytic_frozen_normals,
                                    analytic_sinusoid, angle_deg, bake,
                                    normalize_obj_normals)
    f, fu, fv = analytic_sinusoid()
    scale = 0.12
    dm = bake(f, 512, world_scale=scale)
    curved_obj = normalize_obj_normals(b"""
v 0 0 0
v 1 0 0
v 0 1 0
vt 0.05 0.05
vt 0.95 0.1
vt 0.1 0.95
vn 0.25 -0.1 0.96
vn -0.15 0.2 0.96
vn 0.05 0.3 0.95
f 1/1/1 2/2/2 3/3/3
""")
    rng = np.random.default_rng(7)
    worst_raw = 0.0
    worst_corr = 0.0
    for mesh in (tri_mesh, pr.load_mesh(curved_obj)):
        prism = pr.build_prism(mesh, 0, 0.3)
        for _ in range(100):
            b = rng.dirichlet([2, 2, 2])
            n_fd, _ = displaced_normal(b, prism, dm, 1.0 / 512)
            n_ref, n_corr_ref = analytic_frozen_normals(
                prism, b, f, fu, fv, scale)
            worst_raw = max(worst_raw, angle_deg(n_fd, n_ref))
            n_corr, _ = correct_normal(n_fd, prism.geo_normal,
                                       pr.interpolated_normal(b, prism))
            worst_corr = max(worst_corr, angle_deg(n_corr, n_corr_ref))
    ok = worst_raw < 1.0 and worst_corr < 1.0
    report("criterion 3 (analytic normal oracles)", ok,
           f"displaced normal {worst_raw:.3f} deg, corrected "
           f"{worst_corr:.3f} deg (both < 1 deg at texel-scale steps)")


def test_c04_interval_correctness(orb):
    rng = np.random.default_rng(42)
    n_prisms = 100
    rays_per_prism = 100
    p = orb.prisms
    faces = rng.integers(0, orb.n_prisms, size=n_prisms)
    worst = 0.0
    n_checked = 0
    n_bad = 0
    for f in faces:
        f = int(f)
        box = p["aabb"][f]
        center = 0.5 * (box[:3] + box[3:])
        radius = 0.5 * float(np.linalg.norm(box[3:] - box[:3]))
        origins = center + val._unit_sphere(rng, rays_per_prism) \
            * radius * 2.5
        targets = center + rng.uniform(-0.7, 0.7,
                                       size=(rays_per_prism, 3)) * radius
        dirs = targets - origins
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        t0s, t1s, hits_box = val._slab_windows(origins, dirs, box)
        # sample spacing tied to the offset budget: w_max / 1e4
        wmax = float(p["wmax"][f])
        steps = int(np.ceil(float((t1s - t0s).max()) / (wmax / 1e4)))
        steps = min(max(steps, 1000), 120000)
        first = np.empty(rays_per_prism)
        last = np.empty(rays_per_prism)
        val._dense_classify_k(origins, dirs, t0s, t1s, steps, f,
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
                if has_dense and last[i] - first[i] > 2 * spacing:
                    n_bad += 1
                continue
            if not has_dense:
                continue
            err = max(abs(t_lo - first[i]), abs(t_hi - last[i]))
            worst = max(worst, err / spacing)
            if err > 2.0 * spacing:
                n_bad += 1
    ok = n_bad == 0
    report("criterion 4a (entry/exit vs dense march)", ok,
           f"{n_checked} rays over {n_prisms} prisms, {n_bad} boundary "
           f"mismatches (tol 2 spacings; worst {worst:.2f} spacings)")

    # shared-patch handoff at bit-identical corners
    mesh = pr.load_mesh(demo.fold_pair_obj(150.0).encode())
    arrays = pr.build_prism_arrays(mesh, 0.2)
    pa = pr.prism_from_arrays(arrays, 0)
    pb = pr.prism_from_arrays(arrays, 1)
    rng = np.random.default_rng(43)
    n_pairs = 0
    worst_gap = 0.0
    for _ in range(3000):
        y = rng.uniform(0.2, 0.8)
        z = rng.uniform(-0.05, 0.12)
        d = rng.normal(size=3)
        d[0] = abs(d[0]) + 0.5
        d /= np.linalg.norm(d)
        origin = np.array([-0.5, y, z]) - d * 0.3
        ray = Ray(origin, d, 0.0, 10.0)
        ia = prism_entry_exit(ray, pb)
        ib = prism_entry_exit(ray, pa)
        if ia is None or ib is None:
            continue
        if abs(ia.t_max - ib.t_min) < 1e-3:
            n_pairs += 1
            worst_gap = max(worst_gap, abs(ia.t_max - ib.t_min))
    ok = n_pairs > 300 and worst_gap < 1e-6
    report("criterion 4b (shared-patch watertight handoff)", ok,
           f"{n_pairs} crossings, worst exit/entry gap {worst_gap:.2g} "
           "(< 1e-6)")


def test_c05_surface_watertightness(orb):
    assert orb.dispmap.world_bias >= orb.dt_world
    name, ok, detail = val.check_watertight_spray(orb, n_rays=100000,
                                                  seed=4)
    assert "skipped" not in detail
    report("criterion 5 (closed-surface watertightness)", ok, detail)


def test_c06_thin_feature_sampling():
    texels = 64
    dm_data = demo.ridge_map(texels, column=20, height=1.0, floor=0.0)
    ridge_h = 0.3
    bias = 0.02
    dm = pr.DisplacementMap(dm_data, world_scale=ridge_h, world_bias=bias)
    scene = demo.build_scene_from_parts(
        demo.plate_obj(1), dm,
        {"w_max": 0.4, "world_bias": bias, "dt": 0.008,
         "camera": {"position": [0, 2, 0.0001], "look_at": [0, 0, 0],
                    "width": 8, "height": 8}})
    dt = scene.dt_world
    texel_w = 2.0 / texels          # plate spans [-1, 1]
    frac = 0.82                     # cruising height inside the profile
    h = bias + frac * ridge_h
    width = 2.0 * texel_w * (1.0 - frac)   # bilinear triangle profile
    assert width < dt
    expected = width / dt

    n_rays = 32
    n_frames = 256
    zs = np.linspace(-0.8, 0.8, n_rays)
    origins = np.stack([np.full(n_rays, -2.0), np.full(n_rays, h), zs],
                       axis=1)
    dirs = np.tile([1.0, 0.0, 0.0], (n_rays, 1))

    rng = np.random.default_rng(55)
    hits = np.zeros((n_frames, n_rays), dtype=bool)
    steps_per_mode = []
    for frame in range(n_frames):
        jit = rng.uniform(0, 1, n_rays)
        t = val.pdm_hits_batch(scene, origins, dirs, jitters=jit)
        hits[frame] = np.isfinite(t)
    freq = hits.mean()

    # jitter off: per-ray outcome identical across frames
    t_a = val.pdm_hits_batch(scene, origins, dirs)
    t_b = val.pdm_hits_batch(scene, origins, dirs)
    deterministic = np.array_equal(t_a, t_b)
    some_miss = bool(np.isinf(t_a).any())
    some_hit = bool(np.isfinite(t_a).any())

    # identical sample budgets with and without jitter (allocated count,
    # read straight from the kernel regardless of hit/miss)
    from prismray.march import _march_args
    prism = scene.prism(0)
    ray = Ray(origins[4], dirs[4], 0.0, 10.0)
    interval = prism_entry_exit(ray, prism)
    margs = _march_args(prism, scene.dispmap)
    budgets = []
    for jit in (0.0, 0.37, 0.93):
        hit_buf = np.empty(kernels.HIT_SIZE)
        kernels.march_prism_k(
            ray.origin, ray.dir, interval.t_min, interval.t_max, 0, 0,
            *margs, dt, jit, hit_buf, np.empty((0, 15)))
        budgets.append(int(hit_buf[kernels.HIT_STEPS]))
    same_budget = len(set(budgets)) == 1

    ok = (abs(freq - expected) <= 0.1 * expected and deterministic
          and some_miss and some_hit and same_budget)
    report("criterion 6 (thin-feature stochastic sampling)", ok,
           f"hit frequency {freq:.4f} vs expected {expected:.4f} "
           f"(+-10%), unjittered deterministic={deterministic} with "
           f"misses={some_miss}, equal sample budgets={same_budget}")


def test_c07_corrected_normal_continuity():
    from tests.test_normals import analytic_sinusoid, angle_deg, bake
    mesh = pr.load_mesh(demo.fold_pair_obj(160.0).encode())
    pa = pr.build_prism(mesh, 0, 0.2)
    pb = pr.build_prism(mesh, 1, 0.2)
    dm_const = pr.DisplacementMap.constant(64, 64, 0.5, world_scale=0.1)
    f, _fu, _fv = analytic_sinusoid(kx=1.5, ky=1.0)
    dm_smooth = bake(f, 256, world_scale=0.1)

    def edge_bary(prism, t):
        b = np.zeros(3)
        for k in range(3):
            if np.allclose(prism.source_verts[k], [0, 0, 0]):
                b[k] = 1 - t
            elif np.allclose(prism.source_verts[k], [0, 1, 0]):
                b[k] = t
        return b

    results = {}
    for label, dm in (("const", dm_const), ("smooth", dm_smooth)):
        raw = []
        corr = []
        for t in (0.25, 0.5, 0.75):
            eps = 1e-5
            ba = edge_bary(pa, t) * (1 - eps) + eps / 3
            bb = edge_bary(pb, t) * (1 - eps) + eps / 3
            na, _ = displaced_normal(ba, pa, dm, 1e-4)
            nb, _ = displaced_normal(bb, pb, dm, 1e-4)
            ca, _ = correct_normal(na, pa.geo_normal,
                                   pr.interpolated_normal(ba, pa))
            cb, _ = correct_normal(nb, pb.geo_normal,
                                   pr.interpolated_normal(bb, pb))
            raw.append(angle_deg(na, nb))
            corr.append(angle_deg(ca, cb))
        results[label] = (max(raw), max(corr))
    const_ok = results["const"][1] < 1e-3 and results["const"][0] > 10.0
    smooth_ok = results["smooth"][1] < results["smooth"][0]
    report("criterion 7 (corrected-normal continuity)",
           const_ok and smooth_ok,
           f"20-deg fold: constant-D corrected jump "
           f"{results['const'][1]:.2g} deg (raw {results['const'][0]:.1f}),"
           f" smooth-D corrected {results['smooth'][1]:.2f} < raw "
           f"{results['smooth'][0]:.2f}")


def test_c08_extent_scale_invariance(orb):
    from prismray.scene import scale_prism_extents
    origins, dirs = val.oracle_rays(orb, 10000, seed=77)
    t1 = val.pdm_hits_batch(orb, origins, dirs)
    doubled = scale_prism_extents(copy.deepcopy(orb), 2.0)
    t2 = val.pdm_hits_batch(doubled, origins, dirs)
    same = np.isfinite(t1) == np.isfinite(t2)
    both = np.isfinite(t1) & np.isfinite(t2)
    worst = float(np.abs(t1[both] - t2[both]).max())
    ok = bool(np.all(same)) and worst <= 2.0 * orb.dt_world
    report("criterion 8 (offset-scale hit invariance)", ok,
           f"{int(both.sum())} hits, hit/miss flips "
           f"{int(np.sum(~same))}, worst |dt| {worst:.4g} "
           f"(<= {2 * orb.dt_world:.4g})")


def test_c09_bvh_linear_equivalence(tmp_path_factory):
    d = tmp_path_factory.mktemp("orb500")
    doc = demo.sphere_scene_doc(n_lat=18, n_lon=15)
    path = demo.write_demo_scene(d, doc, n_lat=18, n_lon=15)
    scene = pr.load_scene(path)
    assert scene.n_prisms >= 500
    origins, dirs = val.oracle_rays(scene, 10000, seed=13)
    t_bvh = val.pdm_hits_batch(scene, origins, dirs, use_bvh=True)
    t_lin = val.pdm_hits_batch(scene, origins, dirs, use_bvh=False)
    equal = np.array_equal(t_bvh, t_lin)   # bitwise (inf == inf holds)
    n_hits = int(np.isfinite(t_bvh).sum())
    report("criterion 9 (BVH vs linear scan, exact t)", equal,
           f"{scene.n_prisms} prisms, 10000 rays, {n_hits} hits, "
           f"bitwise equal = {equal}")


def test_c10_dt_quality_performance_trend():
    """Quality improves and cost grows as dt halves.

    The scene carries detail finer than the coarsest dt so sampling still
    limits quality; the error statistic is the 99th percentile of |dt| over
    agreeing hits (the linear crossing refinement makes the bulk error
    second-order, so the sampling error lives in the tail of rays whose
    first crossing was skipped). Grazing rays get a dedicated tangential
    spray and a median statistic.
    """
    tex = demo.smooth_noise(128, seed=0, cutoff=20)
    dm = pr.DisplacementMap(tex, 0.2, 0.02)
    scene = demo.build_scene_from_parts(
        demo.sphere_obj(10, 10), dm, {"w_max": 0.25, "world_bias": 0.02})
    soup = TriangleSoup(tessellate_displaced(scene.mesh, scene.dispmap, 64))
    center, radius = scene.mesh.bounding_sphere()
    rng = np.random.default_rng(21)

    origins_a, dirs_a = val.oracle_rays(scene, 10000, seed=21)
    # tangential spray: impact parameters hugging the displaced surface
    n = 6000
    r_surf = radius + dm.world_bias + 0.5 * dm.world_scale
    u = val._unit_sphere(rng, n)
    v = val._unit_sphere(rng, n)
    v = v - np.einsum("ij,ij->i", v, u)[:, None] * u
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    b = rng.uniform(0.85, 1.02, (n, 1)) * r_surf
    origins_g = center + u * b - v * 3.0 * radius
    dirs_g = v

    t_ref_a = soup.intersect_batch(origins_a, dirs_a)
    t_ref_g, tri_g = soup.intersect_batch(origins_g, dirs_g, with_tris=True)
    hit_a = np.isfinite(t_ref_a)
    hit_g = np.isfinite(t_ref_g)
    nrm = np.zeros((n, 3))
    nrm[hit_g] = soup.normals(tri_g[hit_g])
    cosang = np.abs(np.einsum("ij,ij->i", dirs_g, nrm))
    grazing = hit_g & (cosang < np.cos(np.radians(80.0)))
    assert int(grazing.sum()) > 100

    errors = []
    graze_errors = []
    times = []
    for dt_rel in (0.004, 0.002, 0.001):
        dt = dt_rel * scene.scene_scale
        val.pdm_hits_batch(scene, origins_a[:32], dirs_a[:32], dt=dt)
        best = np.inf
        for _ in range(5):
            t0 = time.perf_counter()
            t_pdm = val.pdm_hits_batch(scene, origins_a, dirs_a, dt=dt)
            best = min(best, time.perf_counter() - t0)
        both = hit_a & np.isfinite(t_pdm)
        errors.append(float(np.percentile(
            np.abs(t_ref_a[both] - t_pdm[both]), 99)))
        tg = val.pdm_hits_batch(scene, origins_g, dirs_g, dt=dt)
        gb = grazing & np.isfinite(tg)
        graze_errors.append(float(np.median(np.abs(t_ref_g[gb] - tg[gb]))))
        times.append(best)
    err_mono = errors[0] > errors[1] > errors[2]
    graze_mono = graze_errors[0] > graze_errors[1] > graze_errors[2]
    time_mono = times[0] < times[1] < times[2]
    ok = err_mono and graze_mono and time_mono
    report("criterion 10 (dt quality/performance trend)", ok,
           f"p99|dt| {[f'{e:.5f}' for e in errors]}, grazing median "
           f"{[f'{e:.6f}' for e in graze_errors]}, time "
           f"{[f'{t * 1e3:.0f}ms' for t in times]} for dt 0.004/0.002/0.001")


def test_c11_edit_loop_decomposition(tmp_path_factory):
    d = tmp_path_factory.mktemp("edit")
    doc = demo.sphere_scene_doc(dims=(256, 256))
    scene = demo.demo_sphere_scene(d, doc=doc)
    session = EditSession(scene, seed=1)
    session.define_brush("b", radius=20, strength=0.6, mode="add")
    session.frame_tick()
    res = session.apply_stroke(StrokeEvent(seq=1, brush="b", x=128, y=128))
    assert res is not None
    rect = res[2]
    area = (rect[2] - rect[0]) * (rect[3] - rect[1])
    _tiles, stats = session.frame_tick()
    ok = stats.blas_ms == 0.0 and stats.edit_ms < stats.rt_ms
    report("criterion 11 (edit-loop decomposition)", ok,
           f"~{area} px region: edit {stats.edit_ms:.2f} ms, "
           f"blas {stats.blas_ms:.0f} ms, raytrace {stats.rt_ms:.2f} ms")


def test_c12_perf_smoke_informative(tmp_path_factory):
    """Non-gating: 512^2 primary-visibility pass on a few-thousand-triangle
    scene at dt = 0.002, using the available cores."""
    import numba
    d = tmp_path_factory.mktemp("perf")
    doc = demo.sphere_scene_doc(n_lat=32, n_lon=32, dims=(512, 512))
    path = demo.write_demo_scene(d, doc, n_lat=32, n_lon=32)
    scene = pr.load_scene(path)
    cam = Camera.from_description(scene.description.camera)
    from prismray.render_kernels import primary_hits_k
    right, up, fwd = cam.basis()
    cargs = (np.ascontiguousarray(cam.position),
             np.ascontiguousarray(right), np.ascontiguousarray(up),
             np.ascontiguousarray(fwd), cam.tan_half_fov,
             cam.width, cam.height)
    tree = scene.bvh
    out_t = np.zeros((512, 512))
    out_f = np.zeros((512, 512), dtype=np.int64)

    def run():
        primary_hits_k(0, 0, 512, 512, 0, 0, *cargs,
                       tree.nodes_bounds, tree.nodes_meta, tree.prim_order,
                       *scene.kernel_args(), scene.dt_world, True,
                       1e-6 * scene.scene_scale, out_t, out_f)

    run()   # warm
    t0 = time.perf_counter()
    run()
    elapsed = time.perf_counter() - t0
    threads = numba.get_num_threads()
    budget_threads = 8
    projected = elapsed * threads / budget_threads
    print(f"[INFO] criterion 12 (perf smoke, non-gating): "
          f"{scene.n_prisms} prisms, 512^2 primary pass {elapsed:.2f}s on "
          f"{threads} threads (~{projected:.2f}s projected at "
          f"{budget_threads} threads; target <= 10s)")
    assert np.isfinite(out_t[np.isfinite(out_t)]).size > 0
