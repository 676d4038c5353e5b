"""Numba-compiled geometry and shading kernels.

Everything hot lives here: barycentric projection, ray/triangle and
ray/bilinear-patch tests, prism interval finding, the displacement marching
loop, BVH traversal and the per-pixel shading loop. Python-facing modules
wrap these with friendlier types; tests call several of them directly.

All geometry is float64. Scene data arrives as plain numpy arrays
(structure-of-arrays, one row per prism) so the kernels stay reusable from
both the renderer and the test oracles.
"""

import numpy as np
from numba import njit

F8 = np.float64

# Classification of the boundary element that produced the entry t.
ENTRY_TOP = 0
ENTRY_BOTTOM = 1
ENTRY_PATCH0 = 2
ENTRY_PATCH1 = 3
ENTRY_PATCH2 = 4
ENTRY_INSIDE = 5

# Grazing boundary hits count as exits; a lone exit this close to the origin
# is treated as a miss (no usable interval).
GRAZE_EPS = 1e-12
EXIT_EPS = 1e-9
PATCH_EPS = 1e-7       # parameter slack at patch seams
DENOM_EPS = 1e-18

# march_prism result codes
MARCH_MISS = 0
MARCH_HIT = 1

# hit record layout (float64[18])
HIT_T = 0
HIT_PX = 1          # 1:4 world point
HIT_B0 = 4          # 4:7 barycentric
HIT_U = 7           # 7:9 uv
HIT_NX = 9          # 9:12 corrected shading normal
HIT_RNX = 12        # 12:15 raw displaced normal
HIT_FACE = 15
HIT_STEPS = 16      # samples allocated for the march
HIT_FLAGS = 17      # bit0: fd perturbation flipped, bit1: normal fallback
HIT_SIZE = 18


# ---------------------------------------------------------------------------
# small vector helpers
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _dot(ax, ay, az, bx, by, bz):
    return ax * bx + ay * by + az * bz


@njit(cache=True, inline="always")
def _cross(ax, ay, az, bx, by, bz):
    return ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx


@njit(cache=True, inline="always")
def _norm3(x, y, z):
    return np.sqrt(x * x + y * y + z * z)


# ---------------------------------------------------------------------------
# counter-based RNG (splitmix64 finalizer) - deterministic per key
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _mix64(z):
    z = np.uint64(z)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def rng_state(seed, pixel_index, sample_index):
    """Initial RNG state keyed by (seed, pixel, sample).

    Streams for different keys are independent, so accumulation is
    reproducible regardless of pixel visit order or thread count.
    """
    z = _mix64(np.uint64(seed) + np.uint64(0x9E3779B97F4A7C15))
    z = _mix64(z ^ (np.uint64(pixel_index) + np.uint64(0xBF58476D1CE4E5B9)))
    z = _mix64(z ^ (np.uint64(sample_index) + np.uint64(0x94D049BB133111EB)))
    return z


@njit(cache=True, inline="always")
def rng_next(state):
    """Advance state, return (new_state, uniform in [0,1))."""
    state = state + np.uint64(0x9E3779B97F4A7C15)
    z = _mix64(state)
    return state, (z >> np.uint64(11)) * (1.0 / 9007199254740992.0)


# ---------------------------------------------------------------------------
# barycentric coordinates (five dot products)
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def triangle_barycentric_k(sx, sy, sz,
                           c0x, c0y, c0z,
                           c1x, c1y, c1z,
                           c2x, c2y, c2z):
    """Barycentric coordinates of s with respect to triangle (c0, c1, c2).

    Returns (b0, b1, b2, ok). ok is False for a degenerate triangle.
    For points off the triangle plane this yields the in-plane projection.
    """
    x0x = c1x - c0x
    x0y = c1y - c0y
    x0z = c1z - c0z
    x1x = c2x - c0x
    x1y = c2y - c0y
    x1z = c2z - c0z
    x2x = sx - c0x
    x2y = sy - c0y
    x2z = sz - c0z
    d00 = _dot(x0x, x0y, x0z, x0x, x0y, x0z)
    d01 = _dot(x0x, x0y, x0z, x1x, x1y, x1z)
    d11 = _dot(x1x, x1y, x1z, x1x, x1y, x1z)
    d20 = _dot(x2x, x2y, x2z, x0x, x0y, x0z)
    d21 = _dot(x2x, x2y, x2z, x1x, x1y, x1z)
    denom = d00 * d11 - d01 * d01
    if np.abs(denom) < DENOM_EPS:
        return 0.0, 0.0, 0.0, False
    inv = 1.0 / denom
    by = (d11 * d20 - d01 * d21) * inv
    bz = (d00 * d21 - d01 * d20) * inv
    return 1.0 - by - bz, by, bz, True


# ---------------------------------------------------------------------------
# ray / triangle (Moller-Trumbore)
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def ray_triangle_k(r0x, r0y, r0z, rdx, rdy, rdz,
                   ax, ay, az, bx, by, bz, cx, cy, cz,
                   t_near, t_far):
    """Returns (hit, t). Edge hits are accepted with a small slack."""
    e1x, e1y, e1z = bx - ax, by - ay, bz - az
    e2x, e2y, e2z = cx - ax, cy - ay, cz - az
    px, py, pz = _cross(rdx, rdy, rdz, e2x, e2y, e2z)
    det = _dot(e1x, e1y, e1z, px, py, pz)
    if np.abs(det) < DENOM_EPS:
        return False, 0.0
    inv = 1.0 / det
    tx, ty, tz = r0x - ax, r0y - ay, r0z - az
    u = _dot(tx, ty, tz, px, py, pz) * inv
    if u < -PATCH_EPS or u > 1.0 + PATCH_EPS:
        return False, 0.0
    qx, qy, qz = _cross(tx, ty, tz, e1x, e1y, e1z)
    v = _dot(rdx, rdy, rdz, qx, qy, qz) * inv
    if v < -PATCH_EPS or u + v > 1.0 + PATCH_EPS:
        return False, 0.0
    t = _dot(e2x, e2y, e2z, qx, qy, qz) * inv
    if t < t_near or t > t_far:
        return False, 0.0
    return True, t


# ---------------------------------------------------------------------------
# ray / bilinear patch
# ---------------------------------------------------------------------------

@njit(cache=True)
def ray_bilinear_patch_k(r0, rd, q00, q10, q01, q11, t_near, t_far, out):
    """Intersect a ray with the bilinear patch spanned by four corners.

    Parameterization: alpha runs along the (q00->q10) and (q01->q11) edges,
    beta along (q00->q01); the surface is q(a,b) = lerp_b(lerp_a(q00,q10),
    lerp_a(q01,q11)). Solved as a quadratic in alpha over the beta rulings.

    out is a float64[2, 8] buffer; each hit row holds
    (t, nx, ny, nz, alpha, beta, 0, 0) with n the unnormalized surface
    normal dq/da x dq/db. Returns the number of hits (0..2).
    """
    eax = q10[0] - q00[0]
    eay = q10[1] - q00[1]
    eaz = q10[2] - q00[2]
    ebx = q01[0] - q00[0]
    eby = q01[1] - q00[1]
    ebz = q01[2] - q00[2]
    # twist vector: zero for a parallelogram
    twx = q11[0] - q01[0] - eax
    twy = q11[1] - q01[1] - eay
    twz = q11[2] - q01[2] - eaz
    wx = q00[0] - r0[0]
    wy = q00[1] - r0[1]
    wz = q00[2] - r0[2]

    # coplanarity of ruling direction u(a), Pa(a)-r0 and rd: quadratic in a
    cx, cy, cz = _cross(ebx, eby, ebz, wx, wy, wz)
    c0 = _dot(cx, cy, cz, rd[0], rd[1], rd[2])
    c1x, c1y, c1z = _cross(ebx, eby, ebz, eax, eay, eaz)
    c2x_, c2y_, c2z_ = _cross(twx, twy, twz, wx, wy, wz)
    c1 = _dot(c1x + c2x_, c1y + c2y_, c1z + c2z_, rd[0], rd[1], rd[2])
    c3x, c3y, c3z = _cross(twx, twy, twz, eax, eay, eaz)
    c2 = _dot(c3x, c3y, c3z, rd[0], rd[1], rd[2])

    na = 0
    a0 = -1.0
    a1 = -1.0
    scale = max(np.abs(c0), max(np.abs(c1), np.abs(c2)))
    if scale < DENOM_EPS:
        return 0  # ray lies in a degenerate configuration
    if np.abs(c2) < 1e-14 * scale:
        if np.abs(c1) < DENOM_EPS:
            return 0
        a0 = -c0 / c1
        na = 1
    else:
        disc = c1 * c1 - 4.0 * c2 * c0
        if disc < 0.0:
            return 0
        sq = np.sqrt(disc)
        if c1 >= 0.0:
            qq = -0.5 * (c1 + sq)
        else:
            qq = -0.5 * (c1 - sq)
        a0 = qq / c2
        if np.abs(qq) > DENOM_EPS:
            a1 = c0 / qq
            na = 2
        else:
            na = 1

    nhits = 0
    for i in range(2):
        if i >= na:
            break
        a = a0 if i == 0 else a1
        if a < -PATCH_EPS or a > 1.0 + PATCH_EPS:
            continue
        # ruling through Pa(a) with direction u(a)
        pax = q00[0] + a * eax
        pay = q00[1] + a * eay
        paz = q00[2] + a * eaz
        ux = ebx + a * twx
        uy = eby + a * twy
        uz = ebz + a * twz
        mx, my, mz = _cross(rd[0], rd[1], rd[2], ux, uy, uz)
        mm = _dot(mx, my, mz, mx, my, mz)
        if mm < DENOM_EPS:
            continue  # ray parallel to the ruling
        dxx = pax - r0[0]
        dxy = pay - r0[1]
        dxz = paz - r0[2]
        tx, ty, tz = _cross(dxx, dxy, dxz, ux, uy, uz)
        t = _dot(tx, ty, tz, mx, my, mz) / mm
        bx_, by_, bz_ = _cross(dxx, dxy, dxz, rd[0], rd[1], rd[2])
        b = _dot(bx_, by_, bz_, mx, my, mz) / mm
        if b < -PATCH_EPS or b > 1.0 + PATCH_EPS:
            continue
        if t < t_near or t > t_far:
            continue
        # surface normal dq/da x dq/db at (a, b)
        dax = eax + b * twx
        day = eay + b * twy
        daz = eaz + b * twz
        dbx = ebx + a * twx
        dby = eby + a * twy
        dbz = ebz + a * twz
        nx, ny, nz = _cross(dax, day, daz, dbx, dby, dbz)
        out[nhits, 0] = t
        out[nhits, 1] = nx
        out[nhits, 2] = ny
        out[nhits, 3] = nz
        out[nhits, 4] = a
        out[nhits, 5] = b
        nhits += 1
    return nhits


# ---------------------------------------------------------------------------
# ray / AABB slab test
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def ray_aabb_k(r0x, r0y, r0z, ix, iy, iz,
               bminx, bminy, bminz, bmaxx, bmaxy, bmaxz,
               t_near, t_far):
    """Slab test with precomputed inverse direction. Returns (hit, t0, t1)."""
    t0 = t_near
    t1 = t_far
    tx0 = (bminx - r0x) * ix
    tx1 = (bmaxx - r0x) * ix
    if tx0 > tx1:
        tx0, tx1 = tx1, tx0
    t0 = max(t0, tx0)
    t1 = min(t1, tx1)
    ty0 = (bminy - r0y) * iy
    ty1 = (bmaxy - r0y) * iy
    if ty0 > ty1:
        ty0, ty1 = ty1, ty0
    t0 = max(t0, ty0)
    t1 = min(t1, ty1)
    tz0 = (bminz - r0z) * iz
    tz1 = (bmaxz - r0z) * iz
    if tz0 > tz1:
        tz0, tz1 = tz1, tz0
    t0 = max(t0, tz0)
    t1 = min(t1, tz1)
    return t0 <= t1, t0, t1


# ---------------------------------------------------------------------------
# prism entry / exit interval
# ---------------------------------------------------------------------------

@njit(cache=True)
def prism_entry_exit_k(r0, rd, f,
                       base, top, gnrm, aabb,
                       t_near, t_far):
    """Find the marching interval of a ray through prism f.

    Tests the bottom and top triangles and the three side patches. Each
    boundary hit updates t_max when the outward normal agrees with the ray
    direction (an exit) and t_min otherwise (an entry). A set t_max with an
    unset t_min means the ray started inside.

    Returns (status, t_min, t_max, entry_kind); status 0 = miss.
    """
    inv_x = 1.0 / rd[0] if rd[0] != 0.0 else np.inf
    inv_y = 1.0 / rd[1] if rd[1] != 0.0 else np.inf
    inv_z = 1.0 / rd[2] if rd[2] != 0.0 else np.inf
    hit_box, tb0, tb1 = ray_aabb_k(
        r0[0], r0[1], r0[2], inv_x, inv_y, inv_z,
        aabb[f, 0], aabb[f, 1], aabb[f, 2],
        aabb[f, 3], aabb[f, 4], aabb[f, 5],
        t_near, t_far)
    if not hit_box:
        return 0, 0.0, 0.0, 0

    gx = gnrm[f, 0]
    gy = gnrm[f, 1]
    gz = gnrm[f, 2]
    t_min = np.inf
    t_max = -np.inf
    have_min = False
    have_max = False
    entry_kind = ENTRY_INSIDE
    n_hits = 0

    g_dot_d = _dot(gx, gy, gz, rd[0], rd[1], rd[2])

    # top triangle: outward normal is +N_g
    ok, t = ray_triangle_k(
        r0[0], r0[1], r0[2], rd[0], rd[1], rd[2],
        top[f, 0, 0], top[f, 0, 1], top[f, 0, 2],
        top[f, 1, 0], top[f, 1, 1], top[f, 1, 2],
        top[f, 2, 0], top[f, 2, 1], top[f, 2, 2],
        t_near, t_far)
    if ok:
        n_hits += 1
        if g_dot_d >= 0.0 or np.abs(g_dot_d) < GRAZE_EPS:
            if t > t_max:
                t_max = t
            have_max = True
        else:
            if t < t_min:
                t_min = t
                entry_kind = ENTRY_TOP
            have_min = True

    # bottom triangle: outward normal is -N_g
    ok, t = ray_triangle_k(
        r0[0], r0[1], r0[2], rd[0], rd[1], rd[2],
        base[f, 0, 0], base[f, 0, 1], base[f, 0, 2],
        base[f, 1, 0], base[f, 1, 1], base[f, 1, 2],
        base[f, 2, 0], base[f, 2, 1], base[f, 2, 2],
        t_near, t_far)
    if ok:
        n_hits += 1
        if -g_dot_d >= 0.0 or np.abs(g_dot_d) < GRAZE_EPS:
            if t > t_max:
                t_max = t
            have_max = True
        else:
            if t < t_min:
                t_min = t
                entry_kind = ENTRY_BOTTOM
            have_min = True

    # side patches: side k spans base edge (k, k+1) up to the top edge
    q00 = np.empty(3, dtype=F8)
    q10 = np.empty(3, dtype=F8)
    q01 = np.empty(3, dtype=F8)
    q11 = np.empty(3, dtype=F8)
    hits = np.empty((2, 8), dtype=F8)
    for k in range(3):
        k1 = (k + 1) % 3
        for c in range(3):
            q00[c] = base[f, k, c]
            q10[c] = base[f, k1, c]
            q01[c] = top[f, k, c]
            q11[c] = top[f, k1, c]
        nh = ray_bilinear_patch_k(r0, rd, q00, q10, q01, q11,
                                  t_near, t_far, hits)
        for i in range(nh):
            n_hits += 1
            t = hits[i, 0]
            nd = _dot(hits[i, 1], hits[i, 2], hits[i, 3],
                      rd[0], rd[1], rd[2])
            if nd >= 0.0 or np.abs(nd) < GRAZE_EPS:
                if t > t_max:
                    t_max = t
                have_max = True
            else:
                if t < t_min:
                    t_min = t
                    entry_kind = ENTRY_PATCH0 + k
                have_min = True

    if n_hits == 0:
        return 0, 0.0, 0.0, 0
    if have_max and not have_min:
        # started inside; a lone exit hugging the origin is no interval
        if n_hits == 1 and t_max < EXIT_EPS:
            return 0, 0.0, 0.0, 0
        t_min = t_near
        entry_kind = ENTRY_INSIDE
        have_min = True
    if have_min and not have_max:
        # numerically lost the exit (grazing corner): bound by the AABB exit
        t_max = tb1
        have_max = True
    t_min = max(t_min, t_near)
    t_max = min(t_max, t_far)
    if t_min > t_max:
        return 0, 0.0, 0.0, 0
    return 1, t_min, t_max, entry_kind


# ---------------------------------------------------------------------------
# displacement map sampling
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def sample_bilinear_k(tex, width, height, u, v, world_scale, world_bias):
    """Bilinear sample of a 16-bit height map; clamp addressing.

    Texel centers sit at ((i+0.5)/w, (j+0.5)/h); returns the world height
    world_bias + value/65535 * world_scale.
    """
    x = u * width - 0.5
    y = v * height - 0.5
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    fx = x - x0
    fy = y - y0
    ix0 = min(max(x0, 0), width - 1)
    ix1 = min(max(x0 + 1, 0), width - 1)
    iy0 = min(max(y0, 0), height - 1)
    iy1 = min(max(y0 + 1, 0), height - 1)
    v00 = F8(tex[iy0, ix0])
    v10 = F8(tex[iy0, ix1])
    v01 = F8(tex[iy1, ix0])
    v11 = F8(tex[iy1, ix1])
    val = ((v00 * (1.0 - fx) + v10 * fx) * (1.0 - fy)
           + (v01 * (1.0 - fx) + v11 * fx) * fy) / 65535.0
    return world_bias + val * world_scale


@njit(cache=True, inline="always")
def sample_rgba_k(tex, width, height, u, v, channel):
    """Bilinear sample of one channel of a float32 RGBA texture."""
    x = u * width - 0.5
    y = v * height - 0.5
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    fx = x - x0
    fy = y - y0
    ix0 = min(max(x0, 0), width - 1)
    ix1 = min(max(x0 + 1, 0), width - 1)
    iy0 = min(max(y0, 0), height - 1)
    iy1 = min(max(y0 + 1, 0), height - 1)
    v00 = F8(tex[iy0, ix0, channel])
    v10 = F8(tex[iy0, ix1, channel])
    v01 = F8(tex[iy1, ix0, channel])
    v11 = F8(tex[iy1, ix1, channel])
    return ((v00 * (1.0 - fx) + v10 * fx) * (1.0 - fy)
            + (v01 * (1.0 - fx) + v11 * fx) * fy)


# ---------------------------------------------------------------------------
# displaced-surface normal (finite differences, frozen interpolated normal)
# ---------------------------------------------------------------------------

@njit(cache=True)
def displaced_normal_k(f, b0, b1, b2, db,
                       orig, vnrm, uvs,
                       tex, texw, texh, world_scale, world_bias,
                       out_n):
    """Finite-difference normal of the displaced surface at barycentric b.

    Three surface points are built by shifting weight from the third corner
    to the first (u direction) and to the second (v direction); all three
    share the interpolated unit normal evaluated at b, so the result
    converges to the cross product of the frozen-normal surface tangents.
    Oriented to match the base geometric normal for a constant map.

    Returns 1 when a perturbation had to be flipped to stay inside the
    triangle, else 0. out_n receives the unnormalized normal.
    """
    nix = b0 * vnrm[f, 0, 0] + b1 * vnrm[f, 1, 0] + b2 * vnrm[f, 2, 0]
    niy = b0 * vnrm[f, 0, 1] + b1 * vnrm[f, 1, 1] + b2 * vnrm[f, 2, 1]
    niz = b0 * vnrm[f, 0, 2] + b1 * vnrm[f, 1, 2] + b2 * vnrm[f, 2, 2]
    nl = _norm3(nix, niy, niz)
    nix /= nl
    niy /= nl
    niz /= nl

    sgn_u = 1.0
    du = db
    if b0 + db > 1.0 or b2 - db < 0.0:
        du = -db
        sgn_u = -1.0
    sgn_v = 1.0
    dv = db
    if b1 + db > 1.0 or b2 - db < 0.0:
        dv = -db
        sgn_v = -1.0
    flipped = 1 if (sgn_u < 0.0 or sgn_v < 0.0) else 0

    sa = np.empty(3, dtype=F8)
    sb = np.empty(3, dtype=F8)
    sc = np.empty(3, dtype=F8)
    # point a: at b; point b: (b0+du, b1, b2-du); point c: (b0, b1+dv, b2-dv)
    for trip in range(3):
        if trip == 0:
            w0, w1, w2 = b0, b1, b2
        elif trip == 1:
            w0, w1, w2 = b0 + du, b1, b2 - du
        else:
            w0, w1, w2 = b0, b1 + dv, b2 - dv
        px = w0 * orig[f, 0, 0] + w1 * orig[f, 1, 0] + w2 * orig[f, 2, 0]
        py = w0 * orig[f, 0, 1] + w1 * orig[f, 1, 1] + w2 * orig[f, 2, 1]
        pz = w0 * orig[f, 0, 2] + w1 * orig[f, 1, 2] + w2 * orig[f, 2, 2]
        u = w0 * uvs[f, 0, 0] + w1 * uvs[f, 1, 0] + w2 * uvs[f, 2, 0]
        v = w0 * uvs[f, 0, 1] + w1 * uvs[f, 1, 1] + w2 * uvs[f, 2, 1]
        h = sample_bilinear_k(tex, texw, texh, u, v, world_scale, world_bias)
        if trip == 0:
            sa[0] = px + nix * h
            sa[1] = py + niy * h
            sa[2] = pz + niz * h
        elif trip == 1:
            sb[0] = px + nix * h
            sb[1] = py + niy * h
            sb[2] = pz + niz * h
        else:
            sc[0] = px + nix * h
            sc[1] = py + niy * h
            sc[2] = pz + niz * h

    tux = sb[0] - sa[0]
    tuy = sb[1] - sa[1]
    tuz = sb[2] - sa[2]
    tvx = sc[0] - sa[0]
    tvy = sc[1] - sa[1]
    tvz = sc[2] - sa[2]
    nx, ny, nz = _cross(tux, tuy, tuz, tvx, tvy, tvz)
    s = sgn_u * sgn_v
    out_n[0] = nx * s
    out_n[1] = ny * s
    out_n[2] = nz * s
    return flipped


# ---------------------------------------------------------------------------
# the marching kernel
# ---------------------------------------------------------------------------

@njit(cache=True)
def march_prism_k(r0, rd, t_lo, t_hi, f, entered_inside,
                  orig, odir, vnrm, gnrm, uvs, dbary,
                  tex, texw, texh, world_scale, world_bias,
                  alpha, alphaw, alphah, has_alpha,
                  dt, jitter,
                  hit_out, trace_buf):
    """March a ray through prism f over [t_lo, t_hi].

    The sample sequence is t_lo + jitter*dt + k*dt (last sample clamped to
    t_hi); the number of samples is fixed by the interval so jittered and
    unjittered marches cost the same. A scanning triangle parallel to the
    base is pulled to each sample's height; barycentric coordinates within
    it project the sample to the base point, yielding the ray height (signed
    along the interpolated normal) and the map height. A sign change brackets
    the surface; the crossing is refined with a single linear interpolation.

    A first sample already below the surface is a hit at that sample when
    the ray entered through a prism boundary (it crossed into matter there);
    rays that started inside the prism instead march on until they emerge,
    so refracted and interior rays do not self-hit.

    When an alpha map is present, crossings whose alpha is below 0.5 are cut
    out and the march continues.

    Returns (status, n_trace_rows_written).
    """
    gx = gnrm[f, 0]
    gy = gnrm[f, 1]
    gz = gnrm[f, 2]

    span = t_hi - t_lo
    if span < 0.0:
        return MARCH_MISS, 0
    n_steps = int(np.floor(span / dt)) + 1
    if n_steps > 10000000:
        n_steps = 10000000
    hit_out[HIT_STEPS] = F8(n_steps)

    c0x = c0y = c0z = 0.0
    c1x = c1y = c1z = 0.0
    c2x = c2y = c2z = 0.0

    prev_f = 0.0
    prev_t = t_lo
    prev_above = False
    ntr = 0
    trace_cap = trace_buf.shape[0]

    for k in range(n_steps):
        t = t_lo + jitter * dt + k * dt
        if t > t_hi:
            t = t_hi
        sx = r0[0] + rd[0] * t
        sy = r0[1] + rd[1] * t
        sz = r0[2] + rd[2] * t

        if k == 0:
            # initial scanning triangle through the first sample's plane
            h0 = _dot(gx, gy, gz,
                      sx - orig[f, 0, 0], sy - orig[f, 0, 1],
                      sz - orig[f, 0, 2])
            c0x = orig[f, 0, 0] + odir[f, 0, 0] * h0
            c0y = orig[f, 0, 1] + odir[f, 0, 1] * h0
            c0z = orig[f, 0, 2] + odir[f, 0, 2] * h0
            c1x = orig[f, 1, 0] + odir[f, 1, 0] * h0
            c1y = orig[f, 1, 1] + odir[f, 1, 1] * h0
            c1z = orig[f, 1, 2] + odir[f, 1, 2] * h0
            c2x = orig[f, 2, 0] + odir[f, 2, 0] * h0
            c2y = orig[f, 2, 1] + odir[f, 2, 1] * h0
            c2z = orig[f, 2, 2] + odir[f, 2, 2] * h0
        else:
            # advance: move the plane down/up by its distance to the sample
            dh = _dot(gx, gy, gz, c0x - sx, c0y - sy, c0z - sz)
            c0x -= odir[f, 0, 0] * dh
            c0y -= odir[f, 0, 1] * dh
            c0z -= odir[f, 0, 2] * dh
            c1x -= odir[f, 1, 0] * dh
            c1y -= odir[f, 1, 1] * dh
            c1z -= odir[f, 1, 2] * dh
            c2x -= odir[f, 2, 0] * dh
            c2y -= odir[f, 2, 1] * dh
            c2z -= odir[f, 2, 2] * dh

        b0, b1, b2, ok = triangle_barycentric_k(
            sx, sy, sz, c0x, c0y, c0z, c1x, c1y, c1z, c2x, c2y, c2z)
        if not ok:
            return MARCH_MISS, ntr

        px = b0 * orig[f, 0, 0] + b1 * orig[f, 1, 0] + b2 * orig[f, 2, 0]
        py = b0 * orig[f, 0, 1] + b1 * orig[f, 1, 1] + b2 * orig[f, 2, 1]
        pz = b0 * orig[f, 0, 2] + b1 * orig[f, 1, 2] + b2 * orig[f, 2, 2]
        nix = b0 * vnrm[f, 0, 0] + b1 * vnrm[f, 1, 0] + b2 * vnrm[f, 2, 0]
        niy = b0 * vnrm[f, 0, 1] + b1 * vnrm[f, 1, 1] + b2 * vnrm[f, 2, 1]
        niz = b0 * vnrm[f, 0, 2] + b1 * vnrm[f, 1, 2] + b2 * vnrm[f, 2, 2]
        dx = sx - px
        dy = sy - py
        dz = sz - pz
        h_ray = _norm3(dx, dy, dz)
        if _dot(nix, niy, niz, dx, dy, dz) < 0.0:
            h_ray = -h_ray
        u = b0 * uvs[f, 0, 0] + b1 * uvs[f, 1, 0] + b2 * uvs[f, 2, 0]
        v = b0 * uvs[f, 0, 1] + b1 * uvs[f, 1, 1] + b2 * uvs[f, 2, 1]
        h_surf = sample_bilinear_k(tex, texw, texh, u, v,
                                   world_scale, world_bias)
        f_val = h_ray - h_surf

        if ntr < trace_cap:
            trace_buf[ntr, 0] = t
            trace_buf[ntr, 1] = sx
            trace_buf[ntr, 2] = sy
            trace_buf[ntr, 3] = sz
            trace_buf[ntr, 4] = c0x
            trace_buf[ntr, 5] = c0y
            trace_buf[ntr, 6] = c0z
            trace_buf[ntr, 7] = c1x
            trace_buf[ntr, 8] = c1y
            trace_buf[ntr, 9] = c1z
            trace_buf[ntr, 10] = c2x
            trace_buf[ntr, 11] = c2y
            trace_buf[ntr, 12] = c2z
            trace_buf[ntr, 13] = h_ray
            trace_buf[ntr, 14] = h_surf
            ntr += 1

        if f_val <= 0.0:
            if prev_above:
                t_hit = prev_t + (t - prev_t) * prev_f / (prev_f - f_val)
            else:
                if k == 0 and entered_inside == 0:
                    t_hit = t  # entered through matter
                else:
                    prev_f = f_val
                    prev_t = t
                    prev_above = False
                    continue  # below the surface with no boundary crossing

            accept = _finalize_hit(
                r0, rd, t_hit, f,
                c0x, c0y, c0z, c1x, c1y, c1z, c2x, c2y, c2z,
                orig, odir, vnrm, gnrm, uvs, dbary,
                tex, texw, texh, world_scale, world_bias,
                alpha, alphaw, alphah, has_alpha,
                hit_out)
            if accept:
                return MARCH_HIT, ntr
            prev_f = f_val
            prev_t = t
            prev_above = False
            continue

        prev_f = f_val
        prev_t = t
        prev_above = True

    return MARCH_MISS, ntr


@njit(cache=True)
def _finalize_hit(r0, rd, t_hit, f,
                  c0x, c0y, c0z, c1x, c1y, c1z, c2x, c2y, c2z,
                  orig, odir, vnrm, gnrm, uvs, dbary,
                  tex, texw, texh, world_scale, world_bias,
                  alpha, alphaw, alphah, has_alpha,
                  hit_out):
    """Recompute attributes at the refined t; returns False for a cut-out."""
    gx = gnrm[f, 0]
    gy = gnrm[f, 1]
    gz = gnrm[f, 2]
    sx = r0[0] + rd[0] * t_hit
    sy = r0[1] + rd[1] * t_hit
    sz = r0[2] + rd[2] * t_hit
    dh = _dot(gx, gy, gz, c0x - sx, c0y - sy, c0z - sz)
    c0x -= odir[f, 0, 0] * dh
    c0y -= odir[f, 0, 1] * dh
    c0z -= odir[f, 0, 2] * dh
    c1x -= odir[f, 1, 0] * dh
    c1y -= odir[f, 1, 1] * dh
    c1z -= odir[f, 1, 2] * dh
    c2x -= odir[f, 2, 0] * dh
    c2y -= odir[f, 2, 1] * dh
    c2z -= odir[f, 2, 2] * dh
    b0, b1, b2, ok = triangle_barycentric_k(
        sx, sy, sz, c0x, c0y, c0z, c1x, c1y, c1z, c2x, c2y, c2z)
    if not ok:
        return False
    u = b0 * uvs[f, 0, 0] + b1 * uvs[f, 1, 0] + b2 * uvs[f, 2, 0]
    v = b0 * uvs[f, 0, 1] + b1 * uvs[f, 1, 1] + b2 * uvs[f, 2, 1]

    if has_alpha:
        a = sample_rgba_k(alpha, alphaw, alphah, u, v, 3)
        if a < 0.5:
            return False

    nix = b0 * vnrm[f, 0, 0] + b1 * vnrm[f, 1, 0] + b2 * vnrm[f, 2, 0]
    niy = b0 * vnrm[f, 0, 1] + b1 * vnrm[f, 1, 1] + b2 * vnrm[f, 2, 1]
    niz = b0 * vnrm[f, 0, 2] + b1 * vnrm[f, 1, 2] + b2 * vnrm[f, 2, 2]
    nl = _norm3(nix, niy, niz)
    nix /= nl
    niy /= nl
    niz /= nl

    raw = np.empty(3, dtype=F8)
    flipped = displaced_normal_k(f, b0, b1, b2, dbary[f],
                                 orig, vnrm, uvs,
                                 tex, texw, texh, world_scale, world_bias,
                                 raw)
    flags = F8(flipped)
    rl = _norm3(raw[0], raw[1], raw[2])
    if rl < 1e-300:
        rnx, rny, rnz = gx, gy, gz
    else:
        rnx = raw[0] / rl
        rny = raw[1] / rl
        rnz = raw[2] / rl
    # corrected shading normal: swap the flat normal for the interpolated one
    cnx = rnx - gx + nix
    cny = rny - gy + niy
    cnz = rnz - gz + niz
    cl = _norm3(cnx, cny, cnz)
    if cl < 1e-12:
        cnx, cny, cnz = nix, niy, niz
        flags += 2.0
    else:
        cnx /= cl
        cny /= cl
        cnz /= cl

    hit_out[HIT_T] = t_hit
    hit_out[HIT_PX] = sx
    hit_out[HIT_PX + 1] = sy
    hit_out[HIT_PX + 2] = sz
    hit_out[HIT_B0] = b0
    hit_out[HIT_B0 + 1] = b1
    hit_out[HIT_B0 + 2] = b2
    hit_out[HIT_U] = u
    hit_out[HIT_U + 1] = v
    hit_out[HIT_NX] = cnx
    hit_out[HIT_NX + 1] = cny
    hit_out[HIT_NX + 2] = cnz
    hit_out[HIT_RNX] = rnx
    hit_out[HIT_RNX + 1] = rny
    hit_out[HIT_RNX + 2] = rnz
    hit_out[HIT_FACE] = F8(f)
    hit_out[HIT_FLAGS] = flags
    return True


# ---------------------------------------------------------------------------
# scene-level closest hit: linear scan and BVH traversal
# ---------------------------------------------------------------------------

@njit(cache=True)
def scene_closest_hit_linear_k(r0, rd, t_near, t_far,
                               base, top, orig, odir, vnrm, gnrm, uvs,
                               aabb, dbary,
                               tex, texw, texh, world_scale, world_bias,
                               alpha, alphaw, alphah, has_alpha,
                               dt, jitter, hit_out):
    """Reference path: march every prism, keep the nearest hit."""
    best_t = np.inf
    found = False
    tmp = np.empty(HIT_SIZE, dtype=F8)
    notrace = np.empty((0, 15), dtype=F8)
    for f in range(base.shape[0]):
        status, t_lo, t_hi, kind = prism_entry_exit_k(
            r0, rd, f, base, top, gnrm, aabb, t_near, t_far)
        if status == 0:
            continue
        inside = 1 if kind == ENTRY_INSIDE else 0
        st, _n = march_prism_k(r0, rd, t_lo, t_hi, f, inside,
                               orig, odir, vnrm, gnrm, uvs, dbary,
                               tex, texw, texh, world_scale, world_bias,
                               alpha, alphaw, alphah, has_alpha,
                               dt, jitter, tmp, notrace)
        if st == MARCH_HIT and tmp[HIT_T] < best_t:
            best_t = tmp[HIT_T]
            for i in range(HIT_SIZE):
                hit_out[i] = tmp[i]
            found = True
    return found


@njit(cache=True)
def scene_closest_hit_bvh_k(r0, rd, t_near, t_far,
                            nodes_bounds, nodes_meta, prim_order,
                            base, top, orig, odir, vnrm, gnrm, uvs,
                            aabb, dbary,
                            tex, texw, texh, world_scale, world_bias,
                            alpha, alphaw, alphah, has_alpha,
                            dt, jitter, hit_out):
    """BVH traversal with near-child ordering and interval pruning.

    Prisms whose entry lies beyond the best hit are skipped; marched prisms
    see exactly the interval the linear scan would give them, so the two
    paths return bit-identical results.
    """
    inv_x = 1.0 / rd[0] if rd[0] != 0.0 else np.inf
    inv_y = 1.0 / rd[1] if rd[1] != 0.0 else np.inf
    inv_z = 1.0 / rd[2] if rd[2] != 0.0 else np.inf
    best_t = np.inf
    found = False
    tmp = np.empty(HIT_SIZE, dtype=F8)
    notrace = np.empty((0, 15), dtype=F8)
    stack = np.empty(64, dtype=np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        ok, tn0, _tn1 = ray_aabb_k(
            r0[0], r0[1], r0[2], inv_x, inv_y, inv_z,
            nodes_bounds[node, 0], nodes_bounds[node, 1],
            nodes_bounds[node, 2], nodes_bounds[node, 3],
            nodes_bounds[node, 4], nodes_bounds[node, 5],
            t_near, t_far)
        if not ok or tn0 > best_t:
            continue
        count = nodes_meta[node, 1]
        if count > 0:
            first = nodes_meta[node, 0]
            for i in range(count):
                f = prim_order[first + i]
                status, t_lo, t_hi, kind = prism_entry_exit_k(
                    r0, rd, f, base, top, gnrm, aabb, t_near, t_far)
                if status == 0 or t_lo > best_t:
                    continue
                inside = 1 if kind == ENTRY_INSIDE else 0
                st, _n = march_prism_k(
                    r0, rd, t_lo, t_hi, f, inside,
                    orig, odir, vnrm, gnrm, uvs, dbary,
                    tex, texw, texh, world_scale, world_bias,
                    alpha, alphaw, alphah, has_alpha,
                    dt, jitter, tmp, notrace)
                if st == MARCH_HIT and tmp[HIT_T] < best_t:
                    best_t = tmp[HIT_T]
                    for j in range(HIT_SIZE):
                        hit_out[j] = tmp[j]
                    found = True
        else:
            left = nodes_meta[node, 0]
            right = left + 1
            okl, tl0, _ = ray_aabb_k(
                r0[0], r0[1], r0[2], inv_x, inv_y, inv_z,
                nodes_bounds[left, 0], nodes_bounds[left, 1],
                nodes_bounds[left, 2], nodes_bounds[left, 3],
                nodes_bounds[left, 4], nodes_bounds[left, 5],
                t_near, t_far)
            okr, tr0, _ = ray_aabb_k(
                r0[0], r0[1], r0[2], inv_x, inv_y, inv_z,
                nodes_bounds[right, 0], nodes_bounds[right, 1],
                nodes_bounds[right, 2], nodes_bounds[right, 3],
                nodes_bounds[right, 4], nodes_bounds[right, 5],
                t_near, t_far)
            if okl and okr:
                if tl0 <= tr0:
                    stack[sp] = right
                    sp += 1
                    stack[sp] = left
                    sp += 1
                else:
                    stack[sp] = left
                    sp += 1
                    stack[sp] = right
                    sp += 1
            elif okl:
                stack[sp] = left
                sp += 1
            elif okr:
                stack[sp] = right
                sp += 1
    return found


@njit(cache=True)
def scene_occluded_k(r0, rd, t_near, t_far,
                     nodes_bounds, nodes_meta, prim_order,
                     base, top, orig, odir, vnrm, gnrm, uvs,
                     aabb, dbary,
                     tex, texw, texh, world_scale, world_bias,
                     alpha, alphaw, alphah, has_alpha,
                     dt, jitter):
    """Any-hit query for shadow rays (first hit wins)."""
    inv_x = 1.0 / rd[0] if rd[0] != 0.0 else np.inf
    inv_y = 1.0 / rd[1] if rd[1] != 0.0 else np.inf
    inv_z = 1.0 / rd[2] if rd[2] != 0.0 else np.inf
    tmp = np.empty(HIT_SIZE, dtype=F8)
    notrace = np.empty((0, 15), dtype=F8)
    stack = np.empty(64, dtype=np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        ok, _t0, _t1 = ray_aabb_k(
            r0[0], r0[1], r0[2], inv_x, inv_y, inv_z,
            nodes_bounds[node, 0], nodes_bounds[node, 1],
            nodes_bounds[node, 2], nodes_bounds[node, 3],
            nodes_bounds[node, 4], nodes_bounds[node, 5],
            t_near, t_far)
        if not ok:
            continue
        count = nodes_meta[node, 1]
        if count > 0:
            first = nodes_meta[node, 0]
            for i in range(count):
                f = prim_order[first + i]
                status, t_lo, t_hi, kind = prism_entry_exit_k(
                    r0, rd, f, base, top, gnrm, aabb, t_near, t_far)
                if status == 0:
                    continue
                inside = 1 if kind == ENTRY_INSIDE else 0
                st, _n = march_prism_k(
                    r0, rd, t_lo, t_hi, f, inside,
                    orig, odir, vnrm, gnrm, uvs, dbary,
                    tex, texw, texh, world_scale, world_bias,
                    alpha, alphaw, alphah, has_alpha,
                    dt, jitter, tmp, notrace)
                if st == MARCH_HIT:
                    return True
        else:
            left = nodes_meta[node, 0]
            stack[sp] = left
            sp += 1
            stack[sp] = left + 1
            sp += 1
    return False
