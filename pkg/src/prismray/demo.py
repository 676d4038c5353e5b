"""Procedural demo assets: spheres, plates, smooth noise maps, scenes.

Everything tests and demos need is generated from seeds, so the shipped
asset files under assets/ can always be regenerated bit-identically.
"""

import json
from pathlib import Path

import numpy as np

from .dispmap import DisplacementMap, save_displacement_png
from .mesh import load_mesh
from .scene import SceneDescription, build_scene


def sphere_obj(n_lat=10, n_lon=10, radius=1.0):
    """Latitude/longitude sphere as OBJ text with exact sphere normals and
    a [0,1]^2 atlas (the u = 0/1 seam is duplicated per corner)."""
    lines = ["# generated uv sphere"]
    # vertices on a (n_lat+1) x (n_lon+1) grid; the +1 column repeats the
    # seam with u = 1
    for i in range(n_lat + 1):
        theta = np.pi * i / n_lat
        for j in range(n_lon + 1):
            phi = 2.0 * np.pi * j / n_lon
            x = np.sin(theta) * np.cos(phi)
            y = np.cos(theta)
            z = np.sin(theta) * np.sin(phi)
            lines.append(f"v {radius * x:.9f} {radius * y:.9f} "
                         f"{radius * z:.9f}")
    for i in range(n_lat + 1):
        for j in range(n_lon + 1):
            lines.append(f"vt {j / n_lon:.9f} {i / n_lat:.9f}")
    for i in range(n_lat + 1):
        theta = np.pi * i / n_lat
        for j in range(n_lon + 1):
            phi = 2.0 * np.pi * j / n_lon
            x = np.sin(theta) * np.cos(phi)
            y = np.cos(theta)
            z = np.sin(theta) * np.sin(phi)
            lines.append(f"vn {x:.9f} {y:.9f} {z:.9f}")

    def vid(i, j):
        return i * (n_lon + 1) + j + 1

    for i in range(n_lat):
        for j in range(n_lon):
            a = vid(i, j)
            b = vid(i + 1, j)
            c = vid(i + 1, j + 1)
            d = vid(i, j + 1)
            if i == 0:
                lines.append(f"f {a}/{a}/{a} {c}/{c}/{c} {b}/{b}/{b}")
            elif i == n_lat - 1:
                lines.append(f"f {a}/{a}/{a} {d}/{d}/{d} {b}/{b}/{b}")
            else:
                lines.append(f"f {a}/{a}/{a} {c}/{c}/{c} {b}/{b}/{b}")
                lines.append(f"f {a}/{a}/{a} {d}/{d}/{d} {c}/{c}/{c}")
    return "\n".join(lines) + "\n"


def plate_obj(n=4, size=1.0):
    """Flat square plate in the xz plane (normal +y), n x n quads."""
    lines = ["# generated plate"]
    for i in range(n + 1):
        for j in range(n + 1):
            x = (j / n - 0.5) * 2.0 * size
            z = (i / n - 0.5) * 2.0 * size
            lines.append(f"v {x:.9f} 0 {z:.9f}")
    for i in range(n + 1):
        for j in range(n + 1):
            lines.append(f"vt {j / n:.9f} {i / n:.9f}")
    lines.append("vn 0 1 0")

    def vid(i, j):
        return i * (n + 1) + j + 1

    for i in range(n):
        for j in range(n):
            a, b = vid(i, j), vid(i, j + 1)
            c, d = vid(i + 1, j + 1), vid(i + 1, j)
            lines.append(f"f {a}/{a}/1 {c}/{c}/1 {b}/{b}/1")
            lines.append(f"f {a}/{a}/1 {d}/{d}/1 {c}/{c}/1")
    return "\n".join(lines) + "\n"


def fold_pair_obj(interior_deg, shared_normals=True):
    """Two triangles sharing the y-axis edge, folded to a given interior
    dihedral angle (180 = flat). The configuration is mirror-symmetric in
    x, so the shared edge's offset extents are bit-identical for both
    faces when vertex normals are shared.
    """
    half = np.radians(180.0 - interior_deg) * 0.5
    # wings fold down from the shared y-axis ridge; outward normals point up
    ax = np.cos(half)
    az = np.sin(half)
    lines = ["# folded pair"]
    lines.append("v 0 0 0")
    lines.append("v 0 1 0")
    lines.append(f"v {ax:.17g} 0.5 {-az:.17g}")
    lines.append(f"v {-ax:.17g} 0.5 {-az:.17g}")
    lines.append("vt 0.45 0.0")
    lines.append("vt 0.45 1.0")
    lines.append("vt 0.9 0.5")
    lines.append("vt 0.0 0.5")
    if shared_normals:
        # wing normals are the face normals; ridge normals bisect (+z)
        na = np.array([az, 0.0, ax])
        nb = np.array([-az, 0.0, ax])
        ne = np.array([0.0, 0.0, 1.0])
        for n in (ne, ne, na, nb):
            lines.append(f"vn {n[0]:.17g} {n[1]:.17g} {n[2]:.17g}")
        lines.append("f 1/1/1 3/3/3 2/2/2")
        lines.append("f 1/1/1 2/2/2 4/4/4")
    else:
        lines.append("f 1/1 3/3 2/2")
        lines.append("f 1/1 2/2 4/4")
    return "\n".join(lines) + "\n"


def smooth_noise(size=128, seed=0, cutoff=8.0, lo=0.1, hi=0.9):
    """Band-limited random height field in [lo, hi], as uint16 texels.

    White noise is low-passed with a Gaussian spectrum so the surface is
    smooth at the texel scale.
    """
    rng = np.random.default_rng(seed)
    white = rng.standard_normal((size, size))
    fx = np.fft.fftfreq(size)[None, :]
    fy = np.fft.fftfreq(size)[:, None]
    filt = np.exp(-0.5 * ((fx * size / cutoff) ** 2
                          + (fy * size / cutoff) ** 2))
    field = np.real(np.fft.ifft2(np.fft.fft2(white) * filt))
    field = field - field.min()
    field = field / max(field.max(), 1e-12)
    field = lo + field * (hi - lo)
    return np.round(field * 65535.0).astype(np.uint16)


def ridge_map(size=64, column=32, height=1.0, floor=0.0):
    """Flat map with one single-texel column raised to `height`."""
    t = np.full((size, size), int(round(floor * 65535)), dtype=np.uint16)
    t[:, column] = int(round(height * 65535))
    return t


def sphere_scene_doc(n_lat=10, n_lon=10, size=128, seed=0,
                     world_scale=0.2, world_bias=0.02, w_max=0.25,
                     dims=(256, 256), dt=0.002):
    return {
        "mesh": "sphere.obj",
        "displacement_map": "disp.png",
        "world_scale": world_scale,
        "world_bias": world_bias,
        "w_max": w_max,
        "w_max_policy": "global",
        "dt": dt,
        "material": {"diffuse": [0.75, 0.68, 0.55], "reflectivity": 0.0,
                     "refractivity": 0.0, "ior": 1.5},
        "lights": [
            {"position": [3.0, 4.0, 2.5], "intensity": [30.0, 30.0, 30.0]},
            {"position": [-3.5, 1.5, -2.0], "intensity": [8.0, 9.0, 12.0]},
        ],
        "camera": {"position": [0.0, 1.1, 3.2], "look_at": [0.0, 0.0, 0.0],
                   "up": [0.0, 1.0, 0.0], "fov_deg": 40.0,
                   "width": dims[0], "height": dims[1]},
        "background": [0.04, 0.05, 0.07],
        "_generator": {"sphere": [n_lat, n_lon], "noise": [size, seed]},
    }


def write_demo_scene(directory, doc=None, noise_seed=0, noise_size=128,
                     n_lat=10, n_lon=10):
    """Write sphere.obj, disp.png and scene.json into a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    doc = doc or sphere_scene_doc(n_lat=n_lat, n_lon=n_lon,
                                  size=noise_size, seed=noise_seed)
    (directory / "sphere.obj").write_text(
        sphere_obj(n_lat=n_lat, n_lon=n_lon), encoding="utf-8")
    tex = smooth_noise(noise_size, seed=noise_seed)
    save_displacement_png(
        DisplacementMap(tex, doc["world_scale"], doc["world_bias"]),
        directory / "disp.png")
    scene_path = directory / "scene.json"
    scene_path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return scene_path


def demo_sphere_scene(tmpdir, **kw):
    """Generate and build the standard demo scene in one call."""
    path = write_demo_scene(tmpdir, **kw)
    return build_scene(SceneDescription.from_file(path))


def build_scene_from_parts(obj_text, dispmap, doc_extra=None, colormap=None):
    """Build a Scene directly from in-memory pieces (tests, demos)."""
    from .scene import SceneDescription, assemble_scene

    doc = {
        "world_scale": dispmap.world_scale,
        "world_bias": dispmap.world_bias,
        "dt": 0.002,
        "camera": {"position": [0, 1, 3], "look_at": [0, 0, 0],
                   "width": 64, "height": 64},
    }
    if doc_extra:
        doc.update(doc_extra)
    desc = SceneDescription.from_dict(doc)
    mesh = load_mesh(obj_text if isinstance(obj_text, bytes)
                     else obj_text.encode())
    return assemble_scene(desc, mesh, dispmap, colormap)
