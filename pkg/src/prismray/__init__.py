"""prismray: CPU ray tracing of displacement-mapped surfaces.

Low-poly base meshes are extruded into parallel offset prisms; rays march
through each prism shell and project linearly onto the displacement map,
so brush edits to the map re-render without rebuilding any acceleration
structure.
"""

from .mesh import BaseMesh, MeshError, load_mesh, split_crease_edges
from .prism import (Aabb, Prism, PrismError, build_prism,
                    build_prism_arrays, default_wmax, normal_factor,
                    per_prism_wmax, prism_aabb, prism_from_arrays,
                    shell_point, sweep_point, interpolated_normal)
from .intersect import IntervalHit, Ray, prism_entry_exit, ray_bilinear_patch
from .dispmap import (Brush, ColorMap, DirtyRect, DisplacementMap,
                      apply_brush, load_color_png, load_displacement_png,
                      region_max, sample_bilinear, save_color_png,
                      save_displacement_png)
from .march import (HitRecord, MarchState, advance_scanning_triangle,
                    correct_normal, displaced_normal, interpolate_crossing,
                    march, march_trace, triangle_barycentric)
from . import bvh
from .scene import (Scene, SceneDescription, SceneError, build_scene,
                    load_scene)
from .render import (Camera, Framebuffer, dirty_rect_to_pixels, read_pfm,
                     render_frame, render_region, resolve, resolve_and_write,
                     write_pfm)
from .service import EditSession

__version__ = "0.1.0"

__all__ = [
    "Aabb", "BaseMesh", "Brush", "Camera", "ColorMap", "DirtyRect",
    "DisplacementMap", "EditSession", "Framebuffer", "HitRecord",
    "IntervalHit", "MarchState", "MeshError", "Prism", "PrismError", "Ray",
    "Scene", "SceneDescription", "SceneError", "advance_scanning_triangle",
    "apply_brush", "build_prism", "build_prism_arrays", "build_scene",
    "bvh", "correct_normal", "default_wmax", "dirty_rect_to_pixels",
    "displaced_normal", "interpolate_crossing", "interpolated_normal",
    "load_color_png", "load_displacement_png", "load_mesh", "load_scene",
    "march", "march_trace", "normal_factor", "per_prism_wmax", "prism_aabb",
    "prism_entry_exit", "prism_from_arrays", "ray_bilinear_patch",
    "read_pfm", "region_max", "render_frame", "render_region", "resolve",
    "resolve_and_write", "sample_bilinear", "save_color_png",
    "save_displacement_png", "shell_point", "split_crease_edges",
    "sweep_point", "triangle_barycentric", "write_pfm",
]
