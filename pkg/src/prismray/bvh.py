"""Software top-level BVH over prism bounding boxes.

Binned surface-area-heuristic build (16 bins, leaves of at most 2), flat
node arrays for the traversal kernels. Displacement edits never touch the
tree; only base-mesh changes force a rebuild.
"""

from dataclasses import dataclass

import numpy as np

MAX_DEPTH = 64
N_BINS = 16
LEAF_SIZE = 2


class BvhError(ValueError):
    pass


@dataclass
class Bvh:
    nodes_bounds: np.ndarray   # (n, 6) float64: min xyz, max xyz
    nodes_meta: np.ndarray     # (n, 2) int64: (left_child | first_prim, count)
    prim_order: np.ndarray     # (m,) int64 permutation of input boxes
    depth: int

    @property
    def n_nodes(self):
        return self.nodes_bounds.shape[0]

    def is_leaf(self, node):
        return self.nodes_meta[node, 1] > 0


def build(aabbs):
    """Build a BVH over (m, 6) boxes. Deterministic for a fixed input order."""
    aabbs = np.asarray(aabbs, dtype=np.float64)
    if aabbs.ndim != 2 or aabbs.shape[1] != 6:
        raise BvhError("aabbs must be an (m, 6) array")
    m = aabbs.shape[0]
    if m == 0:
        raise BvhError("cannot build a BVH over zero boxes")
    lo = aabbs[:, :3]
    hi = aabbs[:, 3:]
    if np.any(hi < lo):
        raise BvhError("found a box with min > max")
    centers = 0.5 * (lo + hi)

    order = np.arange(m, dtype=np.int64)
    bounds = []
    meta = []
    state = {"cursor": 0, "depth": 1}

    def node_bounds(ids):
        return np.concatenate([lo[ids].min(axis=0), hi[ids].max(axis=0)])

    def make_leaf(idx, ids):
        first = state["cursor"]
        order[first:first + len(ids)] = ids
        state["cursor"] += len(ids)
        meta[idx][0] = first
        meta[idx][1] = len(ids)

    def fill(idx, ids, depth):
        """Fill a reserved node slot; children occupy two adjacent slots."""
        bounds[idx] = node_bounds(ids)
        state["depth"] = max(state["depth"], depth)
        if len(ids) <= LEAF_SIZE or depth >= MAX_DEPTH:
            make_leaf(idx, ids)
            return
        left_ids, right_ids = _sah_split(ids, lo, hi, centers)
        if left_ids is None:
            make_leaf(idx, ids)
            return
        left = len(bounds)
        bounds.append(None)
        bounds.append(None)
        meta.append([0, 0])
        meta.append([0, 0])
        meta[idx][0] = left
        meta[idx][1] = 0
        fill(left, left_ids, depth + 1)
        fill(left + 1, right_ids, depth + 1)

    bounds.append(None)
    meta.append([0, 0])
    fill(0, np.arange(m, dtype=np.int64), 1)
    return Bvh(np.asarray(bounds), np.asarray(meta, dtype=np.int64),
               order, state["depth"])


def _sah_split(ids, lo, hi, centers):
    """Best binned SAH split over the three axes; None when splitting
    cannot beat keeping everything together."""
    c = centers[ids]
    cmin = c.min(axis=0)
    cmax = c.max(axis=0)
    ext = cmax - cmin
    best = (np.inf, -1, -1)
    for axis in range(3):
        if ext[axis] <= 0.0:
            continue
        scale = N_BINS * (1.0 - 1e-9) / ext[axis]
        bin_of = np.minimum(((c[:, axis] - cmin[axis]) * scale).astype(int),
                            N_BINS - 1)
        counts = np.bincount(bin_of, minlength=N_BINS)
        bin_lo = np.full((N_BINS, 3), np.inf)
        bin_hi = np.full((N_BINS, 3), -np.inf)
        for b in range(N_BINS):
            sel = bin_of == b
            if counts[b]:
                bin_lo[b] = lo[ids[sel]].min(axis=0)
                bin_hi[b] = hi[ids[sel]].max(axis=0)
        # prefix/suffix areas
        lmin = np.minimum.accumulate(bin_lo, axis=0)
        lmax = np.maximum.accumulate(bin_hi, axis=0)
        rmin = np.minimum.accumulate(bin_lo[::-1], axis=0)[::-1]
        rmax = np.maximum.accumulate(bin_hi[::-1], axis=0)[::-1]
        nl = np.cumsum(counts)
        for cut in range(1, N_BINS):
            n_left = nl[cut - 1]
            n_right = len(ids) - n_left
            if n_left == 0 or n_right == 0:
                continue
            cost = (n_left * _half_area(lmin[cut - 1], lmax[cut - 1])
                    + n_right * _half_area(rmin[cut], rmax[cut]))
            if cost < best[0]:
                best = (cost, axis, cut)
    if best[1] < 0:
        # all centers identical: median split by input order
        half = len(ids) // 2
        if half == 0:
            return None, None
        return ids[:half], ids[half:]
    _, axis, cut = best
    scale = N_BINS * (1.0 - 1e-9) / ext[axis]
    bin_of = np.minimum(((c[:, axis] - cmin[axis]) * scale).astype(int),
                        N_BINS - 1)
    sel = bin_of < cut
    return ids[sel], ids[~sel]


def _half_area(bmin, bmax):
    d = np.maximum(bmax - bmin, 0.0)
    return d[0] * d[1] + d[1] * d[2] + d[2] * d[0]


def validate(bvh, aabbs):
    """Walk the tree asserting containment and the exactly-once property."""
    aabbs = np.asarray(aabbs, dtype=np.float64)
    seen = np.zeros(aabbs.shape[0], dtype=int)

    def walk(node, depth):
        if depth > MAX_DEPTH:
            raise BvhError("tree exceeds the depth bound")
        b = bvh.nodes_bounds[node]
        first, count = bvh.nodes_meta[node]
        if count > 0:
            for i in range(first, first + count):
                p = bvh.prim_order[i]
                seen[p] += 1
                if (np.any(aabbs[p, :3] < b[:3] - 1e-12) or
                        np.any(aabbs[p, 3:] > b[3:] + 1e-12)):
                    raise BvhError(f"leaf {node} does not contain prim {p}")
        else:
            for child in (first, first + 1):
                cb = bvh.nodes_bounds[child]
                if (np.any(cb[:3] < b[:3] - 1e-12) or
                        np.any(cb[3:] > b[3:] + 1e-12)):
                    raise BvhError(f"node {node} does not contain {child}")
                walk(child, depth + 1)

    walk(0, 1)
    if not np.all(seen == 1):
        raise BvhError("every box must appear exactly once in the leaves")
    return True


def closest_hit(ray, bvh, intersector):
    """Generic traversal with a Python callback.

    intersector(prim_id, ray) returns an object with a .t attribute or
    None; the nearest result wins. Identical to a linear scan over all
    prims with the same callback. The renderer uses the fused kernel path
    instead; this surface exists for tests and tooling.
    """
    best = None
    stack = [0]
    inv = np.where(ray.dir != 0.0, 1.0 / np.where(ray.dir == 0.0, 1.0,
                                                  ray.dir), np.inf)
    while stack:
        node = stack.pop()
        b = bvh.nodes_bounds[node]
        t0, t1 = _slab(ray, inv, b)
        if t0 > t1 or (best is not None and t0 > best.t):
            continue
        first, count = bvh.nodes_meta[node]
        if count > 0:
            for i in range(first, first + count):
                res = intersector(int(bvh.prim_order[i]), ray)
                if res is not None and (best is None or res.t < best.t):
                    best = res
        else:
            lt0, lt1 = _slab(ray, inv, bvh.nodes_bounds[first])
            rt0, rt1 = _slab(ray, inv, bvh.nodes_bounds[first + 1])
            children = []
            if rt0 <= rt1:
                children.append((rt0, first + 1))
            if lt0 <= lt1:
                children.append((lt0, first))
            children.sort(key=lambda x: -x[0])  # nearest popped last... first
            for _, c in children:
                stack.append(c)
    return best


def _slab(ray, inv, b):
    t0, t1 = ray.t_near, ray.t_far
    for a in range(3):
        x0 = (b[a] - ray.origin[a]) * inv[a]
        x1 = (b[3 + a] - ray.origin[a]) * inv[a]
        if x0 > x1:
            x0, x1 = x1, x0
        t0 = max(t0, x0)
        t1 = min(t1, x1)
    return t0, t1
