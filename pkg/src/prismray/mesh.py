"""Base mesh loading, validation and crease repair.

Meshes are indexed per corner attribute: a position used with two different
UVs (an atlas seam) appears as two vertex records. Faces are triangles into
the vertex arrays; normals and uvs run parallel to the positions.
"""

from dataclasses import dataclass, field

import numpy as np

DEGENERATE_AREA = 1e-12
DEFAULT_CREASE_DEG = 5.0


class MeshError(ValueError):
    """Malformed or invalid mesh input."""


@dataclass
class BaseMesh:
    vertices: np.ndarray   # (n, 3) float64
    normals: np.ndarray    # (n, 3) float64, unit
    uvs: np.ndarray        # (n, 2) float64
    faces: np.ndarray      # (m, 3) int32
    # populated by split_crease_edges
    reports: list = field(default_factory=list)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_faces(self):
        return self.faces.shape[0]

    def face_normals(self):
        """Unit geometric normal per face."""
        v = self.vertices
        f = self.faces
        e1 = v[f[:, 1]] - v[f[:, 0]]
        e2 = v[f[:, 2]] - v[f[:, 0]]
        n = np.cross(e1, e2)
        lens = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.maximum(lens, 1e-300)

    def face_areas(self):
        v = self.vertices
        f = self.faces
        e1 = v[f[:, 1]] - v[f[:, 0]]
        e2 = v[f[:, 2]] - v[f[:, 0]]
        return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)

    def bounding_sphere(self):
        """(center, radius) of a simple centroid-based bounding sphere."""
        c = 0.5 * (self.vertices.min(axis=0) + self.vertices.max(axis=0))
        r = float(np.max(np.linalg.norm(self.vertices - c, axis=1)))
        return c, r

    def validate(self):
        """Raise MeshError on any violated invariant."""
        if self.normals.shape != self.vertices.shape:
            raise MeshError("normals array must match vertex count")
        if self.uvs.shape != (self.n_vertices, 2):
            raise MeshError("uvs array must match vertex count")
        if self.n_faces and self.faces.max() >= self.n_vertices:
            raise MeshError("face index out of range")
        lens = np.linalg.norm(self.normals, axis=1)
        if self.n_vertices and np.max(np.abs(lens - 1.0)) > 1e-6:
            bad = int(np.argmax(np.abs(lens - 1.0)))
            raise MeshError(f"normal {bad} is not unit length ({lens[bad]})")
        areas = self.face_areas()
        bad = np.nonzero(areas <= DEGENERATE_AREA)[0]
        if bad.size:
            raise MeshError(
                "degenerate faces (area <= 1e-12): "
                + ", ".join(str(i) for i in bad[:16]))
        return self


def load_mesh(source, fmt="obj"):
    """Parse a mesh byte stream (Wavefront OBJ subset) into a BaseMesh.

    Supports v / vn / vt / f records with v, v/vt, v//vn and v/vt/vn corner
    forms; polygons are fan-triangulated. Missing normals are synthesized by
    area-weighted face-normal averaging; missing UVs are an error since the
    displacement map needs a UV atlas. Deterministic: the same bytes always
    produce the same mesh.
    """
    if fmt != "obj":
        raise MeshError(f"unsupported mesh format: {fmt}")
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data

    positions = []
    uvs = []
    normals = []
    corners = []   # list of (pi, ti, ni) triples per triangle corner
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise MeshError(f"line {lineno}: malformed vertex")
            positions.append([float(parts[1]), float(parts[2]),
                              float(parts[3])])
        elif tag == "vt":
            if len(parts) < 3:
                raise MeshError(f"line {lineno}: malformed texcoord")
            uvs.append([float(parts[1]), float(parts[2])])
        elif tag == "vn":
            if len(parts) < 4:
                raise MeshError(f"line {lineno}: malformed normal")
            normals.append([float(parts[1]), float(parts[2]),
                            float(parts[3])])
        elif tag == "f":
            if len(parts) < 4:
                raise MeshError(f"line {lineno}: face needs >= 3 corners")
            poly = []
            for spec in parts[1:]:
                fields = spec.split("/")
                pi = int(fields[0])
                ti = int(fields[1]) if len(fields) > 1 and fields[1] else 0
                ni = int(fields[2]) if len(fields) > 2 and fields[2] else 0
                # OBJ indices are 1-based; negatives count from the end
                pi = pi - 1 if pi > 0 else len(positions) + pi
                ti = ti - 1 if ti > 0 else (len(uvs) + ti if ti else -1)
                ni = ni - 1 if ni > 0 else (len(normals) + ni if ni else -1)
                poly.append((pi, ti, ni))
            for k in range(1, len(poly) - 1):
                corners.append(poly[0])
                corners.append(poly[k])
                corners.append(poly[k + 1])

    if not corners:
        raise MeshError("no faces in mesh stream")
    if not uvs or any(c[1] < 0 for c in corners):
        raise MeshError("mesh has no UV coordinates; a UV atlas is required")

    positions = np.asarray(positions, dtype=np.float64)
    uv_arr = np.asarray(uvs, dtype=np.float64)
    nrm_arr = (np.asarray(normals, dtype=np.float64)
               if normals else np.zeros((0, 3)))

    # weld corners: one output vertex per distinct (position, uv, normal)
    index_of = {}
    out_pos = []
    out_uv = []
    out_nrm_idx = []   # (pi, ni) kept for normal synthesis / lookup
    face_idx = []
    for c in corners:
        key = c
        i = index_of.get(key)
        if i is None:
            i = len(out_pos)
            index_of[key] = i
            out_pos.append(positions[c[0]])
            out_uv.append(uv_arr[c[1]])
            out_nrm_idx.append(c)
        face_idx.append(i)

    vertices = np.asarray(out_pos, dtype=np.float64)
    uvs_out = np.asarray(out_uv, dtype=np.float64)
    faces = np.asarray(face_idx, dtype=np.int32).reshape(-1, 3)

    have_normals = normals and all(c[2] >= 0 for c in corners)
    if have_normals:
        nrm_out = np.asarray([nrm_arr[c[2]] for c in out_nrm_idx],
                             dtype=np.float64)
        lens = np.linalg.norm(nrm_out, axis=1, keepdims=True)
        if np.any(lens < 1e-12):
            raise MeshError("zero-length normal in input")
        nrm_out = nrm_out / lens
    else:
        nrm_out = _synthesize_normals(vertices, faces,
                                      [c[0] for c in out_nrm_idx])

    mesh = BaseMesh(vertices, nrm_out, uvs_out, faces)
    return mesh.validate()


def _synthesize_normals(vertices, faces, position_ids):
    """Area-weighted face-normal average, accumulated per source position
    so atlas seams do not split the shading normal."""
    position_ids = np.asarray(position_ids)
    n_src = position_ids.max() + 1
    acc = np.zeros((n_src, 3))
    e1 = vertices[faces[:, 1]] - vertices[faces[:, 0]]
    e2 = vertices[faces[:, 2]] - vertices[faces[:, 0]]
    fn = np.cross(e1, e2)  # length = 2 * area: the weighting
    for k in range(3):
        np.add.at(acc, position_ids[faces[:, k]], fn)
    lens = np.linalg.norm(acc, axis=1, keepdims=True)
    acc = acc / np.maximum(lens, 1e-300)
    return acc[position_ids]


def _edge_map(faces):
    """(i,j) sorted vertex pair -> list of (face, local_edge)."""
    edges = {}
    for f in range(faces.shape[0]):
        for k in range(3):
            a = int(faces[f, k])
            b = int(faces[f, (k + 1) % 3])
            key = (a, b) if a < b else (b, a)
            edges.setdefault(key, []).append((f, k))
    return edges


def _interior_angle_deg(na, nb, edge_dir):
    """Dihedral interior angle at a shared edge, in degrees.

    Flat surface -> 180; a sharp spike folds toward 0; reflex crevices
    exceed 180. edge_dir follows face A's winding.
    """
    c = float(np.clip(np.dot(na, nb), -1.0, 1.0))
    s = float(np.dot(np.cross(na, nb), edge_dir))
    # convex folds have positive s with this orientation convention
    ang = np.degrees(np.arctan2(s, c))
    return 180.0 - ang


def split_crease_edges(mesh, threshold_deg=DEFAULT_CREASE_DEG):
    """Repair crease singularities so every offset denominator is bounded.

    Interior edges whose dihedral interior angle falls below the threshold
    get both incident triangles split at the edge midpoint (1 -> 2 each);
    the inserted vertex starts from the bisector of the two face normals.
    A final clamp pass then tilts any remaining per-face corner normal with
    N_i . N_g < sin(threshold) toward the face normal, de-sharing the vertex
    where needed, which is what actually bounds 1 / (N_i . N_g).

    Splitting cannot change a dihedral angle, so each crease edge is
    handled exactly once (tracked by endpoint positions); detection is
    re-run, capped at 4 passes, only so faces carrying several crease
    edges get all of them split.

    Non-manifold edges (more than two incident faces) are reported and left
    untouched.
    """
    if not (0.0 < threshold_deg < 90.0):
        raise MeshError("crease threshold must be in (0, 90) degrees")
    verts = [v for v in mesh.vertices]
    nrms = [n for n in mesh.normals]
    uvs = [t for t in mesh.uvs]
    faces = [tuple(int(i) for i in f) for f in mesh.faces]
    reports = list(mesh.reports)
    deferred = None   # after pass 1, only skipped edges are reconsidered

    def pos_key(i, j):
        a = tuple(np.round(verts[i] * 1e9).astype(np.int64))
        b = tuple(np.round(verts[j] * 1e9).astype(np.int64))
        return (a, b) if a <= b else (b, a)

    for _ in range(4):
        varr = np.asarray(verts)
        farr = np.asarray(faces, dtype=np.int32)
        e1 = varr[farr[:, 1]] - varr[farr[:, 0]]
        e2 = varr[farr[:, 2]] - varr[farr[:, 0]]
        fn = np.cross(e1, e2)
        fn = fn / np.maximum(np.linalg.norm(fn, axis=1, keepdims=True),
                             1e-300)
        edges = _edge_map(farr)
        to_split = []
        for (a, b), users in edges.items():
            if len(users) > 2:
                msg = (f"non-manifold edge ({a},{b}): "
                       f"{len(users)} incident faces, left untouched")
                if msg not in reports:
                    reports.append(msg)
                continue
            if len(users) != 2:
                continue
            if deferred is not None and pos_key(a, b) not in deferred:
                continue
            (fa, ka), (fb, _kb) = users
            pa = int(farr[fa, ka])
            pb = int(farr[fa, (ka + 1) % 3])
            edge_dir = varr[pb] - varr[pa]
            elen = np.linalg.norm(edge_dir)
            if elen < 1e-300:
                continue
            ang = _interior_angle_deg(fn[fa], fn[fb], edge_dir / elen)
            if 0.0 < ang < threshold_deg:
                to_split.append(((a, b), fa, fb))
        if not to_split:
            break

        split_faces = set()
        deferred = set()
        for (a, b), fa, fb in to_split:
            if fa in split_faces or fb in split_faces:
                deferred.add(pos_key(a, b))
                continue  # a face splits at one edge per pass
            mid_pos = 0.5 * (verts[a] + verts[b])
            bis = fn[fa] + fn[fb]
            blen = np.linalg.norm(bis)
            bis = bis / blen if blen > 1e-12 else fn[fa]
            mid_uv = 0.5 * (uvs[a] + uvs[b])
            mid = len(verts)
            verts.append(mid_pos)
            nrms.append(bis)
            uvs.append(mid_uv)
            for f in (fa, fb):
                i, j, k = faces[f]
                if {i, j} == {a, b}:
                    faces[f] = (i, mid, k)
                    faces.append((mid, j, k))
                elif {j, k} == {a, b}:
                    faces[f] = (i, j, mid)
                    faces.append((i, mid, k))
                else:
                    faces[f] = (mid, j, k)
                    faces.append((i, j, mid))
                split_faces.add(f)

    out = BaseMesh(np.asarray(verts), np.asarray(nrms), np.asarray(uvs),
                   np.asarray(faces, dtype=np.int32), reports)
    return _clamp_corner_normals(out, threshold_deg)


def _clamp_corner_normals(mesh, threshold_deg):
    """Tilt per-face corner normals so N_i . N_g >= sin(threshold).

    Corners needing adjustment get a private copy of the vertex (position
    and uv preserved), rotated minimally toward the face normal. Normals
    pointing away from the face are a modeling error and raise.
    """
    eps = np.sin(np.radians(threshold_deg)) * (1.0 + 1e-9)
    fn = mesh.face_normals()
    verts = [v for v in mesh.vertices]
    nrms = [n for n in mesh.normals]
    uvs = [t for t in mesh.uvs]
    faces = mesh.faces.copy()
    adjusted = 0
    for f in range(faces.shape[0]):
        g = fn[f]
        for k in range(3):
            i = int(faces[f, k])
            d = float(np.dot(nrms[i], g))
            if d >= eps:
                continue
            if d < -0.5:
                raise MeshError(
                    f"vertex normal opposes face normal at face {f}; "
                    "inverted normals cannot be repaired")
            n = np.asarray(nrms[i])
            tang = n - d * g
            tlen = np.linalg.norm(tang)
            if tlen < 1e-12:
                new_n = g.copy()
            else:
                new_n = eps * g + np.sqrt(max(0.0, 1.0 - eps * eps)) \
                    * (tang / tlen)
                new_n = new_n / np.linalg.norm(new_n)
            j = len(verts)
            verts.append(verts[i].copy())
            nrms.append(new_n)
            uvs.append(uvs[i].copy())
            faces[f, k] = j
            adjusted += 1
    reports = list(mesh.reports)
    if adjusted:
        reports.append(f"clamped {adjusted} corner normals at creases")
    out = BaseMesh(np.asarray(verts), np.asarray(nrms), np.asarray(uvs),
                   faces, reports)
    return out.validate()
