"""Scene description (JSON) and the built, traceable scene.

A scene bundles the crease-repaired mesh, the prism arrays, the BVH, the
displacement/color map snapshots and the shading setup. dt in the file is
relative to the scene scale (the bounding-sphere diameter); the build
resolves it to world units.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import bvh as bvh_mod
from . import mesh as mesh_mod
from . import prism as prism_mod
from .dispmap import (ColorMap, DisplacementMap, load_color_png,
                      load_displacement_png)
from .march import default_dbary
from .prism import prism_from_arrays


class SceneError(ValueError):
    pass


@dataclass
class Material:
    diffuse: np.ndarray
    reflectivity: float = 0.0
    refractivity: float = 0.0
    ior: float = 1.5

    @classmethod
    def from_dict(cls, d):
        return cls(
            diffuse=np.asarray(d.get("diffuse", [0.8, 0.8, 0.8]),
                               dtype=np.float64),
            reflectivity=float(d.get("reflectivity", 0.0)),
            refractivity=float(d.get("refractivity", 0.0)),
            ior=float(d.get("ior", 1.5)),
        )


@dataclass
class Light:
    position: np.ndarray
    intensity: np.ndarray

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["position"], dtype=np.float64),
                   np.asarray(d["intensity"], dtype=np.float64))


@dataclass
class CameraDescription:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    fov_deg: float
    width: int
    height: int

    @classmethod
    def from_dict(cls, d):
        cam = cls(
            position=np.asarray(d["position"], dtype=np.float64),
            look_at=np.asarray(d["look_at"], dtype=np.float64),
            up=np.asarray(d.get("up", [0.0, 1.0, 0.0]), dtype=np.float64),
            fov_deg=float(d.get("fov_deg", 45.0)),
            width=int(d.get("width", 512)),
            height=int(d.get("height", 512)),
        )
        if not (0.0 < cam.fov_deg < 180.0):
            raise SceneError("camera fov must be in (0, 180) degrees")
        if cam.width < 1 or cam.height < 1:
            raise SceneError("camera dimensions must be at least 1 pixel")
        return cam


@dataclass
class SceneDescription:
    """Parsed scene file; paths resolved relative to the file."""
    mesh_path: Optional[Path]
    displacement_path: Optional[Path]
    color_path: Optional[Path]
    world_scale: float
    world_bias: float
    w_max_policy: str              # "global" | "per_prism"
    w_max: Optional[float]         # None -> scale-relative default
    dt: float                      # relative to scene scale
    crease_threshold_deg: float
    material: Material
    lights: list
    camera: CameraDescription
    background: np.ndarray
    root: Path

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        if not path.exists():
            raise SceneError(f"scene file not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls.from_dict(doc, root=path.parent)

    @classmethod
    def from_dict(cls, doc, root=Path(".")):
        root = Path(root)

        def resolve(key):
            p = doc.get(key)
            if p is None:
                return None
            p = root / p
            if not p.exists():
                raise SceneError(f"referenced file not found: {p}")
            return p

        dt = float(doc.get("dt", 0.002))
        if dt <= 0.0:
            raise SceneError("dt must be positive")
        policy = doc.get("w_max_policy", "global")
        if policy not in ("global", "per_prism"):
            raise SceneError(f"unknown w_max policy {policy!r}")
        if "camera" not in doc:
            raise SceneError("scene needs a camera")
        return cls(
            mesh_path=resolve("mesh"),
            displacement_path=resolve("displacement_map"),
            color_path=resolve("color_map"),
            world_scale=float(doc.get("world_scale", 0.1)),
            world_bias=float(doc.get("world_bias", 0.0)),
            w_max_policy=policy,
            w_max=(float(doc["w_max"]) if doc.get("w_max") is not None
                   else None),
            dt=dt,
            crease_threshold_deg=float(doc.get("crease_threshold_deg",
                                               mesh_mod.DEFAULT_CREASE_DEG)),
            material=Material.from_dict(doc.get("material", {})),
            lights=[Light.from_dict(d) for d in doc.get("lights", [])],
            camera=CameraDescription.from_dict(doc["camera"]),
            background=np.asarray(doc.get("background", [0.0, 0.0, 0.0]),
                                  dtype=np.float64),
            root=root,
        )


@dataclass
class Scene:
    """Built scene: everything the kernels need, plus snapshot bookkeeping."""
    description: SceneDescription
    mesh: Optional[mesh_mod.BaseMesh]
    prisms: Optional[dict]            # SoA arrays
    bvh: Optional[bvh_mod.Bvh]
    dispmap: Optional[DisplacementMap]
    colormap: Optional[ColorMap]
    dt_world: float
    scene_scale: float
    dbary: np.ndarray = field(default_factory=lambda: np.zeros(0))
    uv_rects: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    version: int = 0
    _colormap_f32: Optional[np.ndarray] = None

    @property
    def n_prisms(self):
        return 0 if self.prisms is None else self.prisms["base"].shape[0]

    def prism(self, face):
        return prism_from_arrays(self.prisms, face)

    def kernel_args(self):
        """Positional tail shared by the scene-level kernels."""
        p = self.prisms
        dm = self.dispmap
        if self._colormap_f32 is not None:
            alpha = self._colormap_f32
            ah, aw = alpha.shape[:2]
            has_alpha = True
        else:
            alpha = _NO_ALPHA
            aw = ah = 1
            has_alpha = False
        return (p["base"], p["top"], p["orig"], p["odir"], p["vnrm"],
                p["gnrm"], p["uvs"], p["aabb"], self.dbary,
                dm.data, dm.width, dm.height, dm.world_scale, dm.world_bias,
                alpha, aw, ah, has_alpha)

    def publish_maps(self, dispmap=None, colormap=None):
        """Swap in new snapshots; bumps the scene version.

        No prism or BVH work happens here: displacement edits never touch
        the acceleration structure.
        """
        if dispmap is not None:
            self.dispmap = dispmap
        if colormap is not None:
            self.colormap = colormap
            self._colormap_f32 = colormap.as_float()
        self.version += 1

    def prism_height_budget(self, face):
        """World height above the source triangle this prism can bound."""
        return float(self.prisms["wmax"][face] - self.prisms["wneg"][face])

    def faces_touching_uv_rect(self, rect):
        """Indices of prisms whose UV bounding box meets a texel rect."""
        if self.n_prisms == 0 or rect.empty:
            return np.zeros(0, dtype=np.int64)
        w = self.dispmap.width
        h = self.dispmap.height
        u0, v0 = rect.x0 / w, rect.y0 / h
        u1, v1 = rect.x1 / w, rect.y1 / h
        r = self.uv_rects
        sel = ((r[:, 0] <= u1) & (r[:, 2] >= u0) &
               (r[:, 1] <= v1) & (r[:, 3] >= v0))
        return np.nonzero(sel)[0]


_NO_ALPHA = np.zeros((1, 1, 4), dtype=np.float32)


def assemble_scene(desc, mesh, dispmap, colormap=None):
    """Repair, validate and accelerate already-loaded scene parts.

    Applies crease splitting, checks the displacement range against the
    offset budget, builds the prism arrays and the BVH.
    """
    mesh = mesh_mod.split_crease_edges(mesh, desc.crease_threshold_deg)
    _, radius = mesh.bounding_sphere()
    scene_scale = 2.0 * radius
    dt_world = desc.dt * scene_scale

    w_neg = max(0.0, -dispmap.world_bias)
    top_height = dispmap.world_bias + dispmap.world_scale
    if desc.w_max_policy == "per_prism":
        w_max = np.array([prism_mod.per_prism_wmax(mesh, f, dispmap)
                          for f in range(mesh.n_faces)])
        w_max = np.maximum(w_max, 1e-4 * radius)
    else:
        w_max = desc.w_max if desc.w_max is not None \
            else prism_mod.default_wmax(mesh)
        if top_height > w_max:
            raise SceneError(
                f"displacement bounds check failed: world_bias + world_scale"
                f" = {top_height:.6g} exceeds w_max = {w_max:.6g}")

    prisms = prism_mod.build_prism_arrays(mesh, w_max, w_neg)

    dbary = np.empty(mesh.n_faces)
    uv_rects = np.empty((mesh.n_faces, 4))
    for f in range(mesh.n_faces):
        pr = prism_from_arrays(prisms, f)
        dbary[f] = default_dbary(pr, dispmap)
        uv = mesh.uvs[mesh.faces[f]]
        uv_rects[f] = (uv[:, 0].min(), uv[:, 1].min(),
                       uv[:, 0].max(), uv[:, 1].max())

    tree = bvh_mod.build(prisms["aabb"])
    scene = Scene(desc, mesh, prisms, tree, dispmap, colormap,
                  dt_world=dt_world, scene_scale=scene_scale,
                  dbary=dbary, uv_rects=uv_rects)
    if colormap is not None:
        scene._colormap_f32 = colormap.as_float()
    return scene


def build_scene(desc):
    """Load, repair, validate and accelerate a scene description."""
    if desc.mesh_path is None:
        return Scene(desc, None, None, None, None, None,
                     dt_world=desc.dt, scene_scale=1.0)

    with open(desc.mesh_path, "rb") as fh:
        mesh = mesh_mod.load_mesh(fh.read())

    if desc.displacement_path is not None:
        dispmap = load_displacement_png(desc.displacement_path,
                                        desc.world_scale, desc.world_bias)
    else:
        dispmap = DisplacementMap.constant(4, 4, 0.0, desc.world_scale,
                                           desc.world_bias)
    colormap = (load_color_png(desc.color_path)
                if desc.color_path is not None else None)
    return assemble_scene(desc, mesh, dispmap, colormap)


def load_scene(path):
    return build_scene(SceneDescription.from_file(path))


def scale_prism_extents(scene, factor):
    """Rebuild prisms with every w_max scaled; hit positions must not move
    (the displaced surface does not depend on the bounding extents)."""
    mesh = scene.mesh
    w_neg = float(scene.prisms["wneg"][0]) if scene.n_prisms else 0.0
    old_pos = scene.prisms["wmax"] - scene.prisms["wneg"]
    prisms = prism_mod.build_prism_arrays(mesh, old_pos * factor, w_neg)
    scene.prisms = prisms
    scene.bvh = bvh_mod.build(prisms["aabb"])
    scene.version += 1
    return scene
