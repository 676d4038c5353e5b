#!/usr/bin/env python3
"""Regenerate the committed demo scene under assets/.

Everything is derived from fixed seeds, so the files come out identical
every time.
"""

from pathlib import Path

from prismray import demo

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    path = demo.write_demo_scene(ROOT / "assets")
    print(f"wrote {path.parent}/: sphere.obj, disp.png, scene.json")
