#!/usr/bin/env python3
"""Headless sculpting loop: brush strokes, dirty-region re-renders and the
per-tick cost decomposition (texture edit / acceleration rebuild / ray
trace). The rebuild column is always zero: displacement edits never touch
the BVH.
"""

from pathlib import Path

import numpy as np

from prismray import load_scene
from prismray.render import resolve_and_write
from prismray.service import EditSession, StrokeEvent

ROOT = Path(__file__).resolve().parents[1]
OUT = Path(__file__).parent / "out"

if __name__ == "__main__":
    OUT.mkdir(exist_ok=True)
    scene = load_scene(ROOT / "assets" / "scene.json")
    session = EditSession(scene, seed=0)
    session.define_brush("raise", radius=10, strength=0.6, mode="add")
    session.define_brush("carve", radius=6, strength=-0.5, mode="add")

    session.frame_tick()   # first progressive pass
    print("tick  edit_ms  blas_ms  rt_ms  dirty_px")

    rng = np.random.default_rng(3)
    seq = 0
    for tick in range(12):
        if tick % 3 != 2:
            brush = "raise" if tick % 2 == 0 else "carve"
            x = 128 + rng.integers(-40, 40)
            y = 128 + rng.integers(-40, 40)
            seq += 1
            res = session.apply_stroke(
                StrokeEvent(seq=seq, brush=brush, x=float(x), y=float(y)))
            area = 0
            if res is not None:
                r = res[2]
                area = (r[2] - r[0]) * (r[3] - r[1])
        else:
            area = 0   # idle tick: progressive refinement instead
        _tiles, stats = session.frame_tick()
        print(f"{tick:4d}  {stats.edit_ms:7.2f}  {stats.blas_ms:7.0f}  "
              f"{stats.rt_ms:6.1f}  {area}")

    for _ in range(16):
        session.frame_tick()
    resolve_and_write(session.fb, OUT / "sculpted.png", "png")
    print(f"wrote {OUT}/sculpted.png after convergence")
