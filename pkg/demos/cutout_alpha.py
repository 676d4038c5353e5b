#!/usr/bin/env python3
"""Cut-outs through the color map's alpha channel.

Texels with alpha below one half are holes: the march ignores surface
crossings there and keeps going, so rays pass through the surface sheet
(chainmail-style geometry without modeling rings).
"""

from pathlib import Path

import numpy as np

from prismray import ColorMap, DisplacementMap, demo
from prismray.render import Camera, render_frame, resolve_and_write

OUT = Path(__file__).parent / "out"

if __name__ == "__main__":
    OUT.mkdir(exist_ok=True)
    size = 128
    yy, xx = np.mgrid[0:size, 0:size]
    # bump grid
    fx = (xx % 32 - 16) / 16.0
    fy = (yy % 32 - 16) / 16.0
    r2 = fx * fx + fy * fy
    height = np.clip(1.0 - r2, 0.0, 1.0)
    dm = DisplacementMap((height * 60000).astype(np.uint16),
                         world_scale=0.25, world_bias=0.02)

    rgba = np.zeros((size, size, 4), dtype=np.uint8)
    rgba[..., 0] = 200
    rgba[..., 1] = 160
    rgba[..., 2] = 90
    rgba[..., 3] = np.where(r2 < 0.55, 255, 0)   # keep the bump discs only

    doc = {
        "w_max": 0.3, "world_bias": 0.02,
        "material": {"diffuse": [1.0, 1.0, 1.0]},
        "lights": [{"position": [1.5, 3.0, 1.0], "intensity": [25, 25, 25]}],
        "background": [0.05, 0.1, 0.2],
        "camera": {"position": [0.0, 2.2, 1.6], "look_at": [0, 0, 0],
                   "fov_deg": 45.0, "width": 384, "height": 384},
    }
    scene = demo.build_scene_from_parts(demo.plate_obj(2), dm, doc,
                                        colormap=ColorMap(rgba))
    cam = Camera.from_description(scene.description.camera)
    fb = render_frame(scene, cam, spp=8, seed=0)
    resolve_and_write(fb, OUT / "cutouts.png", "png")
    print(f"wrote {OUT}/cutouts.png (background visible through the holes)")
