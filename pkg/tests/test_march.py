import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import prismray as pr
from prismray import demo
from prismray.intersect import Ray
from prismray.march import (MarchState, advance_scanning_triangle,
                            interpolate_crossing, march, march_trace,
                            triangle_barycentric, trace_to_jsonl)


def test_barycentric_at_vertex():
    c = [np.array([0.0, 0.0, 0.0]), np.array([2.0, 0.0, 0.0]),
         np.array([0.0, 3.0, 0.0])]
    assert np.allclose(triangle_barycentric(c[0], *c), [1, 0, 0])


def test_barycentric_centroid():
    c = [np.array([0.0, 0.0, 1.0]), np.array([2.0, 0.0, 1.0]),
         np.array([0.5, 3.0, 1.0])]
    s = (c[0] + c[1] + c[2]) / 3.0
    assert np.allclose(triangle_barycentric(s, *c), [1 / 3] * 3, atol=1e-12)


@settings(max_examples=300, deadline=None)
@given(st.floats(0.01, 0.98), st.floats(0.01, 0.98), st.integers(0, 2 ** 31))
def test_barycentric_construct_then_invert(u, v, seed):
    if u + v >= 0.99:
        v = 0.99 - u
    rng = np.random.default_rng(seed)
    c = rng.normal(size=(3, 3)) * 2.0
    area2 = np.linalg.norm(np.cross(c[1] - c[0], c[2] - c[0]))
    if area2 < 1e-3:
        return
    b = np.array([u, v, 1.0 - u - v])
    s = b @ c
    got = triangle_barycentric(s, *c)
    assert np.allclose(got, b, atol=1e-9)


def test_barycentric_degenerate_raises():
    c0 = np.zeros(3)
    c1 = np.array([1.0, 0.0, 0.0])
    c2 = np.array([2.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        triangle_barycentric(np.array([0.5, 0.0, 0.0]), c0, c1, c2)


# -- scanning triangle advance ------------------------------------------------

def make_state(prism, s, scanning=None, dt=0.01):
    if scanning is None:
        scanning = prism.source_verts.copy()
    return MarchState(0.0, np.asarray(s, float), np.asarray(scanning, float),
                      0.0, 0.0, dt)


def test_advance_noop_when_in_plane(tri_mesh):
    prism = pr.build_prism(tri_mesh, 0, 0.1)
    st0 = make_state(prism, [0.3, 0.3, 0.0])
    st1 = advance_scanning_triangle(st0, prism)
    assert np.allclose(st1.scanning, st0.scanning, atol=1e-15)


def test_advance_right_prism_translates(tri_mesh):
    prism = pr.build_prism(tri_mesh, 0, 0.1)
    st0 = make_state(prism, [0.3, 0.3, 0.01])
    st1 = advance_scanning_triangle(st0, prism)
    assert np.allclose(st1.scanning - st0.scanning, [[0, 0, 0.01]] * 3)


def test_advance_tilted_in_plane_residual(tilted_mesh):
    prism = pr.build_prism(tilted_mesh, 0, 0.1)
    rng = np.random.default_rng(8)
    for _ in range(200):
        b = rng.dirichlet([1, 1, 1])
        h = rng.uniform(0, prism.w_max)
        s = pr.sweep_point(b, h, prism)
        st0 = make_state(prism, s)
        st1 = advance_scanning_triangle(st0, prism)
        residual = abs(prism.geo_normal @ (st1.scanning[0] - s))
        assert residual < 1e-9 * prism.w_max
        # corners stay on the extended edge lines with one common lambda
        lam = (st1.scanning - prism.source_verts) / prism.offset_dirs
        assert np.allclose(lam, lam.flat[0], atol=1e-9)


# -- crossing interpolation ---------------------------------------------------

def test_crossing_midpoint():
    assert interpolate_crossing(1.0, 0.01, 1.0, -1.0) \
        == pytest.approx(1.005)


def test_crossing_at_end():
    assert interpolate_crossing(1.0, 0.01, 0.5, 0.0) == pytest.approx(1.01)


def test_crossing_requires_bracket():
    with pytest.raises(ValueError):
        interpolate_crossing(0.0, 0.01, -1.0, 1.0)


def test_crossing_close_to_bisection_on_sinusoid():
    # smooth height difference crossing zero inside the step
    def f(t):
        return np.sin(2.0 * np.pi * (0.3 - t))
    t0, dt = 0.295, 0.02
    f0, f1 = f(t0), f(t0 + dt)
    assert f0 > 0 >= f1
    got = interpolate_crossing(t0, dt, f0, f1)
    lo, hi = t0, t0 + dt
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    assert abs(got - 0.5 * (lo + hi)) < 0.05 * dt


# -- the march ----------------------------------------------------------------

def test_march_constant_map_hits_plane(tri_mesh):
    prism = pr.build_prism(tri_mesh, 0, 0.1)
    stored = round(0.5 * 65535) / 65535.0
    dm = pr.DisplacementMap.constant(16, 16, 0.5, world_scale=0.06)
    ray = Ray(np.array([0.3, 0.3, 1.0]), np.array([0.0, 0.0, -1.0]),
              0.0, 10.0)
    hit = march(ray, prism, dm, dt=0.002)
    assert hit is not None
    expected_t = 1.0 - stored * 0.06
    assert abs(hit.t - expected_t) <= 0.002
    assert np.allclose(hit.normal, [0, 0, 1], atol=1e-6)
    assert hit.barycentric.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(hit.barycentric >= -1e-6)


def test_march_miss_above_surface(tri_mesh):
    prism = pr.build_prism(tri_mesh, 0, 0.1)
    dm = pr.DisplacementMap.constant(16, 16, 0.5, world_scale=0.06)
    # grazing ray passing above the maximum possible surface height
    ray = Ray(np.array([-1.0, 0.3, 0.08]), np.array([1.0, 0.0, 0.0]),
              0.0, 10.0)
    assert march(ray, prism, dm, dt=0.002) is None


def test_march_zero_jitter_reproduces_plain(tri_mesh):
    prism = pr.build_prism(tri_mesh, 0, 0.1)
    dm = pr.DisplacementMap(demo.smooth_noise(64, seed=2, lo=0.2, hi=0.8),
                            world_scale=0.08)
    ray = Ray(np.array([0.4, 0.35, 1.0]),
              np.array([0.05, -0.03, -1.0]) / np.linalg.norm(
                  [0.05, -0.03, -1.0]), 0.0, 10.0)
    h0 = march(ray, prism, dm, dt=0.003, jitter=0.0)
    h1 = march(ray, prism, dm, dt=0.003, jitter=0.0)
    assert h0 is not None and h1 is not None
    assert h0.t == h1.t


def test_march_jitter_distribution_uniform(tri_mesh):
    """First-sample positions t_min + R*dt are uniform within one step,
    and R = 0 starts exactly at t_min."""
    prism = pr.build_prism(tri_mesh, 0, 0.1)
    dm = pr.DisplacementMap.constant(8, 8, 0.5, world_scale=0.06)
    ray = Ray(np.array([0.3, 0.3, 1.0]), np.array([0.0, 0.0, -1.0]),
              0.0, 10.0)
    dt = 0.002
    _, steps0 = march_trace(ray, prism, dm, dt=dt, jitter=0.0)
    t_min = steps0[0]["t"]
    assert t_min == pytest.approx(0.9, abs=1e-12)
    rng = np.random.default_rng(17)
    n = 400
    offsets = []
    for j in rng.uniform(0, 1, n):
        _, steps = march_trace(ray, prism, dm, dt=dt, jitter=float(j))
        offsets.append((steps[0]["t"] - t_min) / dt)
    u = np.sort(np.asarray(offsets))
    assert u.min() >= 0.0 and u.max() < 1.0
    ks = np.max(np.abs(u - np.arange(1, n + 1) / n))
    assert ks < 1.63 / np.sqrt(n)   # 1% Kolmogorov-Smirnov band


def test_march_step_count_independent_of_jitter(tri_mesh):
    prism = pr.build_prism(tri_mesh, 0, 0.1)
    dm = pr.DisplacementMap.constant(8, 8, 0.5, world_scale=0.06)
    ray = Ray(np.array([0.3, 0.3, 1.0]), np.array([0.0, 0.0, -1.0]),
              0.0, 10.0)
    h0 = march(ray, prism, dm, dt=0.002, jitter=0.0)
    h1 = march(ray, prism, dm, dt=0.002, jitter=0.73)
    assert h0.steps == h1.steps


def test_march_alpha_cutout_continues(tri_mesh):
    prism = pr.build_prism(tri_mesh, 0, 0.1)
    dm = pr.DisplacementMap.constant(16, 16, 0.5, world_scale=0.06)
    # alpha 0 everywhere: every crossing is a hole
    rgba = np.zeros((8, 8, 4), dtype=np.uint8)
    cmap = pr.ColorMap(rgba)
    ray = Ray(np.array([0.3, 0.3, 1.0]), np.array([0.0, 0.0, -1.0]),
              0.0, 10.0)
    assert march(ray, prism, dm, dt=0.002) is not None
    assert march(ray, prism, dm, dt=0.002, colormap=cmap) is None


def test_march_negative_bias_surface_below_base(tri_mesh):
    prism = pr.build_prism(tri_mesh, 0, 0.1, w_neg=0.05)
    dm = pr.DisplacementMap.constant(16, 16, 0.5, world_scale=0.02,
                                     world_bias=-0.04)
    stored = round(0.5 * 65535) / 65535.0
    ray = Ray(np.array([0.3, 0.3, 1.0]), np.array([0.0, 0.0, -1.0]),
              0.0, 10.0)
    hit = march(ray, prism, dm, dt=0.001)
    assert hit is not None
    # surface sits below z=0 at bias + 0.5*scale
    expected_z = -0.04 + stored * 0.02
    assert abs(hit.point[2] - expected_z) <= 0.002


def test_march_trace_records(tri_mesh):
    prism = pr.build_prism(tri_mesh, 0, 0.1)
    dm = pr.DisplacementMap.constant(16, 16, 0.5, world_scale=0.06)
    ray = Ray(np.array([0.3, 0.3, 1.0]), np.array([0.0, 0.0, -1.0]),
              0.0, 10.0)
    hit, steps = march_trace(ray, prism, dm, dt=0.005)
    assert hit is not None and len(steps) >= 2
    for rec in steps:
        s = np.asarray(rec["s"])
        assert np.allclose(s, ray.at(rec["t"]), atol=1e-12)
        # sample lies in the scanning triangle's plane
        c0 = np.asarray(rec["c0"])
        assert abs(prism.geo_normal @ (s - c0)) < 1e-9
    # heights decrease toward the surface for this vertical ray
    hr = [rec["h_ray"] for rec in steps]
    assert hr[0] > hr[-1]
    text = trace_to_jsonl(steps, prism_id=0)
    import json
    row = json.loads(text.splitlines()[0])
    assert set(row) == {"prism", "step", "t", "s", "c0", "c1", "c2",
                        "h_ray", "h_surf"}


def test_march_immediate_hit_entering_matter(tri_mesh):
    """A ray entering a side patch below the surface level hits there."""
    prism = pr.build_prism(tri_mesh, 0, 0.1)
    dm = pr.DisplacementMap.constant(16, 16, 0.5, world_scale=0.06)
    surface_z = round(0.5 * 65535) / 65535.0 * 0.06
    ray = Ray(np.array([-1.0, 0.3, surface_z * 0.5]),
              np.array([1.0, 0.0, 0.0]), 0.0, 10.0)
    hit = march(ray, prism, dm, dt=0.002)
    assert hit is not None
    assert hit.t == pytest.approx(1.0, abs=1e-6)   # at the x=0 side patch


def test_march_inside_start_no_self_hit(tri_mesh):
    """Rays starting inside the shell below the surface march on through
    (refraction support) instead of self-hitting at t ~ 0."""
    prism = pr.build_prism(tri_mesh, 0, 0.1)
    dm = pr.DisplacementMap.constant(16, 16, 0.5, world_scale=0.06)
    surface_z = round(0.5 * 65535) / 65535.0 * 0.06
    ray = Ray(np.array([0.3, 0.3, surface_z * 0.5]),
              np.array([0.0, 0.0, 1.0]), 1e-9, 10.0)
    hit = march(ray, prism, dm, dt=0.002)
    assert hit is None   # exits upward through its own surface, no hit
