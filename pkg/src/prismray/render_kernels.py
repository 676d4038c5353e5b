"""Per-pixel shading loop.

One sample traces up to four kinds of rays: the primary ray, one shadow ray
per light at each shading point, a mirror reflection (and refraction) chain
capped at depth 2, and a single cosine-weighted indirect bounce from the
primary hit that gathers direct light only.

Every random draw comes from a counter RNG keyed by (seed, pixel, sample),
so images are bit-identical for a fixed seed no matter the tile order or
thread count, and a regional re-render reproduces the full-frame pixels.
"""

import numpy as np
from numba import njit, prange

from .kernels import (HIT_T, HIT_PX, HIT_U, HIT_NX, HIT_SIZE,
                      rng_state, rng_next,
                      scene_closest_hit_bvh_k, scene_occluded_k,
                      sample_rgba_k, prism_entry_exit_k, ray_aabb_k)

MAX_STACK = 16
MODE_FULL = 0
MODE_DIRECT_ONLY = 1
INV_PI = 1.0 / np.pi


@njit(cache=True, inline="always")
def _cosine_dir(nx, ny, nz, u1, u2):
    """Cosine-weighted hemisphere direction around the unit normal."""
    r = np.sqrt(u1)
    phi = 2.0 * np.pi * u2
    x = r * np.cos(phi)
    y = r * np.sin(phi)
    z = np.sqrt(max(0.0, 1.0 - u1))
    # orthonormal basis around n
    if np.abs(nx) > 0.9:
        ax, ay, az = 0.0, 1.0, 0.0
    else:
        ax, ay, az = 1.0, 0.0, 0.0
    tx = ny * az - nz * ay
    ty = nz * ax - nx * az
    tz = nx * ay - ny * ax
    tl = np.sqrt(tx * tx + ty * ty + tz * tz)
    tx /= tl
    ty /= tl
    tz /= tl
    bx = ny * tz - nz * ty
    by = nz * tx - nx * tz
    bz = nx * ty - ny * tx
    return (x * tx + y * bx + z * nx,
            x * ty + y * by + z * ny,
            x * tz + y * bz + z * nz)


@njit(cache=True)
def shade_sample(r0x, r0y, r0z, rdx, rdy, rdz, state,
                 nodes_bounds, nodes_meta, prim_order,
                 base, top, orig, odir, vnrm, gnrm, uvs, aabb, dbary,
                 tex, texw, texh, world_scale, world_bias,
                 alpha, alphaw, alphah, has_alpha,
                 dt, jitter_on, t_eps, n_off,
                 mat_diffuse, mat_refl, mat_refr, mat_ior,
                 lights_pos, lights_int, background,
                 out_rgb):
    """Trace one camera sample; adds linear radiance into out_rgb."""
    so = np.empty((MAX_STACK, 3), dtype=np.float64)
    sd = np.empty((MAX_STACK, 3), dtype=np.float64)
    sw = np.empty((MAX_STACK, 3), dtype=np.float64)
    sm = np.empty((MAX_STACK, 2), dtype=np.int64)   # depth, mode
    hit = np.empty(HIT_SIZE, dtype=np.float64)
    ro = np.empty(3, dtype=np.float64)
    rd = np.empty(3, dtype=np.float64)

    sp = 0
    so[sp, 0] = r0x
    so[sp, 1] = r0y
    so[sp, 2] = r0z
    sd[sp, 0] = rdx
    sd[sp, 1] = rdy
    sd[sp, 2] = rdz
    sw[sp, 0] = 1.0
    sw[sp, 1] = 1.0
    sw[sp, 2] = 1.0
    sm[sp, 0] = 0
    sm[sp, 1] = MODE_FULL
    sp += 1

    while sp > 0:
        sp -= 1
        for c in range(3):
            ro[c] = so[sp, c]
            rd[c] = sd[sp, c]
        wr = sw[sp, 0]
        wg = sw[sp, 1]
        wb = sw[sp, 2]
        depth = sm[sp, 0]
        mode = sm[sp, 1]
        if wr + wg + wb < 1e-6:
            continue

        if jitter_on:
            state, rj = rng_next(state)
        else:
            rj = 0.0
        found = scene_closest_hit_bvh_k(
            ro, rd, t_eps, np.inf,
            nodes_bounds, nodes_meta, prim_order,
            base, top, orig, odir, vnrm, gnrm, uvs, aabb, dbary,
            tex, texw, texh, world_scale, world_bias,
            alpha, alphaw, alphah, has_alpha,
            dt, rj, hit)
        if not found:
            out_rgb[0] += wr * background[0]
            out_rgb[1] += wg * background[1]
            out_rgb[2] += wb * background[2]
            continue

        px = hit[HIT_PX]
        py = hit[HIT_PX + 1]
        pz = hit[HIT_PX + 2]
        nx = hit[HIT_NX]
        ny = hit[HIT_NX + 1]
        nz = hit[HIT_NX + 2]
        # face the incoming ray for shading
        if nx * rd[0] + ny * rd[1] + nz * rd[2] > 0.0:
            nx, ny, nz = -nx, -ny, -nz

        ar = mat_diffuse[0]
        ag = mat_diffuse[1]
        ab = mat_diffuse[2]
        if has_alpha:
            u = hit[HIT_U]
            v = hit[HIT_U + 1]
            ar *= sample_rgba_k(alpha, alphaw, alphah, u, v, 0)
            ag *= sample_rgba_k(alpha, alphaw, alphah, u, v, 1)
            ab *= sample_rgba_k(alpha, alphaw, alphah, u, v, 2)

        ox = px + nx * n_off
        oy = py + ny * n_off
        oz = pz + nz * n_off

        for li in range(lights_pos.shape[0]):
            lx = lights_pos[li, 0] - ox
            ly = lights_pos[li, 1] - oy
            lz = lights_pos[li, 2] - oz
            dist = np.sqrt(lx * lx + ly * ly + lz * lz)
            if dist < 1e-12:
                continue
            lx /= dist
            ly /= dist
            lz /= dist
            cosv = nx * lx + ny * ly + nz * lz
            if cosv <= 0.0:
                continue
            if jitter_on:
                state, rs = rng_next(state)
            else:
                rs = 0.0
            ro2 = np.empty(3, dtype=np.float64)
            rd2 = np.empty(3, dtype=np.float64)
            ro2[0] = ox
            ro2[1] = oy
            ro2[2] = oz
            rd2[0] = lx
            rd2[1] = ly
            rd2[2] = lz
            blocked = scene_occluded_k(
                ro2, rd2, t_eps, dist - t_eps,
                nodes_bounds, nodes_meta, prim_order,
                base, top, orig, odir, vnrm, gnrm, uvs, aabb, dbary,
                tex, texw, texh, world_scale, world_bias,
                alpha, alphaw, alphah, has_alpha,
                dt, rs)
            if not blocked:
                g = cosv / (dist * dist) * INV_PI
                out_rgb[0] += wr * ar * lights_int[li, 0] * g
                out_rgb[1] += wg * ag * lights_int[li, 1] * g
                out_rgb[2] += wb * ab * lights_int[li, 2] * g

        if mode == MODE_DIRECT_ONLY:
            continue

        if depth == 0 and sp < MAX_STACK - 1:
            # one indirect bounce gathering direct light
            state, u1 = rng_next(state)
            state, u2 = rng_next(state)
            bx, by, bz = _cosine_dir(nx, ny, nz, u1, u2)
            so[sp, 0] = ox
            so[sp, 1] = oy
            so[sp, 2] = oz
            sd[sp, 0] = bx
            sd[sp, 1] = by
            sd[sp, 2] = bz
            sw[sp, 0] = wr * ar
            sw[sp, 1] = wg * ag
            sw[sp, 2] = wb * ab
            sm[sp, 0] = depth + 1
            sm[sp, 1] = MODE_DIRECT_ONLY
            sp += 1

        if depth < 2:
            if mat_refl > 0.0 and sp < MAX_STACK - 1:
                dn = rd[0] * nx + rd[1] * ny + rd[2] * nz
                so[sp, 0] = ox
                so[sp, 1] = oy
                so[sp, 2] = oz
                sd[sp, 0] = rd[0] - 2.0 * dn * nx
                sd[sp, 1] = rd[1] - 2.0 * dn * ny
                sd[sp, 2] = rd[2] - 2.0 * dn * nz
                sw[sp, 0] = wr * mat_refl
                sw[sp, 1] = wg * mat_refl
                sw[sp, 2] = wb * mat_refl
                sm[sp, 0] = depth + 1
                sm[sp, 1] = MODE_FULL
                sp += 1
            if mat_refr > 0.0 and sp < MAX_STACK - 1:
                # n currently faces the ray; entering when the raw normal did
                rawx = hit[HIT_NX]
                rawy = hit[HIT_NX + 1]
                rawz = hit[HIT_NX + 2]
                entering = (rawx * rd[0] + rawy * rd[1]
                            + rawz * rd[2]) < 0.0
                eta = 1.0 / mat_ior if entering else mat_ior
                cosi = -(rd[0] * nx + rd[1] * ny + rd[2] * nz)
                kk = 1.0 - eta * eta * (1.0 - cosi * cosi)
                if kk >= 0.0:
                    coef = eta * cosi - np.sqrt(kk)
                    tx = eta * rd[0] + coef * nx
                    ty = eta * rd[1] + coef * ny
                    tz = eta * rd[2] + coef * nz
                else:
                    # total internal reflection
                    dn = rd[0] * nx + rd[1] * ny + rd[2] * nz
                    tx = rd[0] - 2.0 * dn * nx
                    ty = rd[1] - 2.0 * dn * ny
                    tz = rd[2] - 2.0 * dn * nz
                tl = np.sqrt(tx * tx + ty * ty + tz * tz)
                if tl > 1e-12:
                    side = -1.0 if kk >= 0.0 else 1.0
                    so[sp, 0] = px + nx * n_off * side
                    so[sp, 1] = py + ny * n_off * side
                    so[sp, 2] = pz + nz * n_off * side
                    sd[sp, 0] = tx / tl
                    sd[sp, 1] = ty / tl
                    sd[sp, 2] = tz / tl
                    sw[sp, 0] = wr * mat_refr
                    sw[sp, 1] = wg * mat_refr
                    sw[sp, 2] = wb * mat_refr
                    sm[sp, 0] = depth + 1
                    sm[sp, 1] = MODE_FULL
                    sp += 1
    return state


@njit(cache=True, parallel=True)
def render_rect_k(accum, counts, x0, y0, x1, y1,
                  spp_start, spp, seed,
                  cam_pos, cam_right, cam_up, cam_fwd,
                  tan_half_fov, img_w, img_h,
                  nodes_bounds, nodes_meta, prim_order,
                  base, top, orig, odir, vnrm, gnrm, uvs, aabb, dbary,
                  tex, texw, texh, world_scale, world_bias,
                  alpha, alphaw, alphah, has_alpha,
                  dt, jitter_on, t_eps, n_off,
                  mat_diffuse, mat_refl, mat_refr, mat_ior,
                  lights_pos, lights_int, background,
                  has_geometry):
    """Accumulate spp samples into the pixel rect [x0,x1) x [y0,y1)."""
    aspect = img_w / img_h
    for row in prange(y1 - y0):
        y = y0 + row
        rgb = np.empty(3, dtype=np.float64)
        for x in range(x0, x1):
            pix = y * img_w + x
            for s in range(spp_start, spp_start + spp):
                state = rng_state(seed, pix, s)
                state, jx = rng_next(state)
                state, jy = rng_next(state)
                ndc_x = (2.0 * ((x + jx) / img_w) - 1.0) \
                    * tan_half_fov * aspect
                ndc_y = (1.0 - 2.0 * ((y + jy) / img_h)) * tan_half_fov
                dx = cam_fwd[0] + cam_right[0] * ndc_x + cam_up[0] * ndc_y
                dy = cam_fwd[1] + cam_right[1] * ndc_x + cam_up[1] * ndc_y
                dz = cam_fwd[2] + cam_right[2] * ndc_x + cam_up[2] * ndc_y
                dl = np.sqrt(dx * dx + dy * dy + dz * dz)
                dx /= dl
                dy /= dl
                dz /= dl
                rgb[0] = 0.0
                rgb[1] = 0.0
                rgb[2] = 0.0
                if has_geometry:
                    shade_sample(cam_pos[0], cam_pos[1], cam_pos[2],
                                 dx, dy, dz, state,
                                 nodes_bounds, nodes_meta, prim_order,
                                 base, top, orig, odir, vnrm, gnrm, uvs,
                                 aabb, dbary,
                                 tex, texw, texh, world_scale, world_bias,
                                 alpha, alphaw, alphah, has_alpha,
                                 dt, jitter_on, t_eps, n_off,
                                 mat_diffuse, mat_refl, mat_refr, mat_ior,
                                 lights_pos, lights_int, background, rgb)
                else:
                    rgb[0] = background[0]
                    rgb[1] = background[1]
                    rgb[2] = background[2]
                accum[y, x, 0] += np.float32(rgb[0])
                accum[y, x, 1] += np.float32(rgb[1])
                accum[y, x, 2] += np.float32(rgb[2])
            counts[y, x] += spp


@njit(cache=True, parallel=True)
def primary_hits_k(x0, y0, x1, y1, seed, spp_index,
                   cam_pos, cam_right, cam_up, cam_fwd,
                   tan_half_fov, img_w, img_h,
                   nodes_bounds, nodes_meta, prim_order,
                   base, top, orig, odir, vnrm, gnrm, uvs, aabb, dbary,
                   tex, texw, texh, world_scale, world_bias,
                   alpha, alphaw, alphah, has_alpha,
                   dt, jitter_on, t_eps,
                   out_t, out_face):
    """Primary-visibility pass: hit t (or inf) and face id (or -1) per
    pixel. Used by the benchmark and validation paths."""
    aspect = img_w / img_h
    for row in prange(y1 - y0):
        y = y0 + row
        hit = np.empty(HIT_SIZE, dtype=np.float64)
        ro = np.empty(3, dtype=np.float64)
        rd = np.empty(3, dtype=np.float64)
        for x in range(x0, x1):
            pix = y * img_w + x
            state = rng_state(seed, pix, spp_index)
            state, jx = rng_next(state)
            state, jy = rng_next(state)
            ndc_x = (2.0 * ((x + jx) / img_w) - 1.0) * tan_half_fov * aspect
            ndc_y = (1.0 - 2.0 * ((y + jy) / img_h)) * tan_half_fov
            dx = cam_fwd[0] + cam_right[0] * ndc_x + cam_up[0] * ndc_y
            dy = cam_fwd[1] + cam_right[1] * ndc_x + cam_up[1] * ndc_y
            dz = cam_fwd[2] + cam_right[2] * ndc_x + cam_up[2] * ndc_y
            dl = np.sqrt(dx * dx + dy * dy + dz * dz)
            ro[0] = cam_pos[0]
            ro[1] = cam_pos[1]
            ro[2] = cam_pos[2]
            rd[0] = dx / dl
            rd[1] = dy / dl
            rd[2] = dz / dl
            if jitter_on:
                state, rj = rng_next(state)
            else:
                rj = 0.0
            found = scene_closest_hit_bvh_k(
                ro, rd, t_eps, np.inf,
                nodes_bounds, nodes_meta, prim_order,
                base, top, orig, odir, vnrm, gnrm, uvs, aabb, dbary,
                tex, texw, texh, world_scale, world_bias,
                alpha, alphaw, alphah, has_alpha,
                dt, rj, hit)
            if found:
                out_t[y, x] = hit[HIT_T]
                out_face[y, x] = np.int64(hit[15])
            else:
                out_t[y, x] = np.inf
                out_face[y, x] = -1


@njit(cache=True, parallel=True)
def intersect_only_k(x0, y0, x1, y1, seed, spp_index,
                     cam_pos, cam_right, cam_up, cam_fwd,
                     tan_half_fov, img_w, img_h,
                     nodes_bounds, nodes_meta, prim_order,
                     base, top, gnrm, aabb,
                     t_eps, out_n):
    """Prism interval pass only (no marching): counts boundary intervals
    per pixel. Times the pure prism-intersection share of a frame."""
    aspect = img_w / img_h
    for row in prange(y1 - y0):
        y = y0 + row
        ro = np.empty(3, dtype=np.float64)
        rd = np.empty(3, dtype=np.float64)
        for x in range(x0, x1):
            pix = y * img_w + x
            state = rng_state(seed, pix, spp_index)
            state, jx = rng_next(state)
            state, jy = rng_next(state)
            ndc_x = (2.0 * ((x + jx) / img_w) - 1.0) * tan_half_fov * aspect
            ndc_y = (1.0 - 2.0 * ((y + jy) / img_h)) * tan_half_fov
            dx = cam_fwd[0] + cam_right[0] * ndc_x + cam_up[0] * ndc_y
            dy = cam_fwd[1] + cam_right[1] * ndc_x + cam_up[1] * ndc_y
            dz = cam_fwd[2] + cam_right[2] * ndc_x + cam_up[2] * ndc_y
            dl = np.sqrt(dx * dx + dy * dy + dz * dz)
            ro[0] = cam_pos[0]
            ro[1] = cam_pos[1]
            ro[2] = cam_pos[2]
            rd[0] = dx / dl
            rd[1] = dy / dl
            rd[2] = dz / dl
            n = 0
            inv_x = 1.0 / rd[0] if rd[0] != 0.0 else np.inf
            inv_y = 1.0 / rd[1] if rd[1] != 0.0 else np.inf
            inv_z = 1.0 / rd[2] if rd[2] != 0.0 else np.inf
            stack = np.empty(64, dtype=np.int64)
            sp = 0
            stack[sp] = 0
            sp += 1
            while sp > 0:
                sp -= 1
                node = stack[sp]
                ok, _t0, _t1 = ray_aabb_k(
                    ro[0], ro[1], ro[2], inv_x, inv_y, inv_z,
                    nodes_bounds[node, 0], nodes_bounds[node, 1],
                    nodes_bounds[node, 2], nodes_bounds[node, 3],
                    nodes_bounds[node, 4], nodes_bounds[node, 5],
                    t_eps, np.inf)
                if not ok:
                    continue
                count = nodes_meta[node, 1]
                if count > 0:
                    first = nodes_meta[node, 0]
                    for i in range(count):
                        f = prim_order[first + i]
                        status, _lo, _hi, _kind = prism_entry_exit_k(
                            ro, rd, f, base, top, gnrm, aabb,
                            t_eps, np.inf)
                        n += status
                else:
                    left = nodes_meta[node, 0]
                    stack[sp] = left
                    sp += 1
                    stack[sp] = left + 1
                    sp += 1
            out_n[y, x] = n
