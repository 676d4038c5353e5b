import numpy as np
import pytest

import prismray as pr
from prismray import demo

QUAD_OBJ = b"""
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
vt 0 0
vt 1 0
vt 1 1
vt 0 1
vn 0 0 1
f 1/1/1 2/2/1 3/3/1
f 1/1/1 3/3/1 4/4/1
"""

TRI_OBJ = b"""
v 0 0 0
v 1 0 0
v 0 1 0
vt 0 0
vt 1 0
vt 0 1
vn 0 0 1
f 1/1/1 2/2/1 3/3/1
"""

TILTED_TRI_OBJ = b"""
v 0 0 0
v 1 0 0
v 0 1 0
vt 0 0
vt 1 0
vt 0 1
vn 0.3 0.1 0.9486832980505138
vn -0.2 0.25 0.9474175425861608
vn 0.1 -0.3 0.9486832980505138
f 1/1/1 2/2/2 3/3/3
"""


def normalize_obj_normals(text):
    """Re-emit vn lines unit-length (keeps fixtures hand-editable)."""
    out = []
    for line in text.decode().splitlines():
        if line.startswith("vn "):
            v = np.array([float(x) for x in line.split()[1:4]])
            v = v / np.linalg.norm(v)
            out.append(f"vn {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}")
        else:
            out.append(line)
    return ("\n".join(out) + "\n").encode()


@pytest.fixture(scope="session")
def quad_mesh():
    return pr.load_mesh(QUAD_OBJ)


@pytest.fixture(scope="session")
def tri_mesh():
    return pr.load_mesh(TRI_OBJ)


@pytest.fixture(scope="session")
def tilted_mesh():
    return pr.load_mesh(normalize_obj_normals(TILTED_TRI_OBJ))


@pytest.fixture(scope="session")
def demo_scene(tmp_path_factory):
    """The standard sphere demo scene (also used by the CLI tests)."""
    d = tmp_path_factory.mktemp("demo_scene")
    return demo.demo_sphere_scene(d), d


@pytest.fixture(scope="session")
def flat_scene():
    """Flat plate with a constant-height map: analytic geometry."""
    dm = pr.DisplacementMap.constant(32, 32, 0.5, world_scale=0.2,
                                     world_bias=0.0)
    return demo.build_scene_from_parts(
        demo.plate_obj(2), dm,
        {"w_max": 0.3,
         "camera": {"position": [0, 3, 0.0001], "look_at": [0, 0, 0],
                    "width": 64, "height": 64},
         "lights": [{"position": [0, 5, 0], "intensity": [50, 50, 50]}],
         "background": [0, 0, 0]})
