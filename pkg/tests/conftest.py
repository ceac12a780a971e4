"""Shared fixtures: generated mesh assets."""

import numpy as np
import pytest
from PIL import Image

CUBE_OBJ = """\
mtllib cube.mtl
v -1 -1 -1
v  1 -1 -1
v  1  1 -1
v -1  1 -1
v -1 -1  1
v  1 -1  1
v  1  1  1
v -1  1  1
vt 0.25 0.25
vt 0.75 0.25
vt 0.75 0.75
vt 0.25 0.75
usemtl painted
f 1/1 3/3 2/2
f 1/1 4/4 3/3
f 5/1 6/2 7/3
f 5/1 7/3 8/4
f 1/1 2/2 6/3
f 1/1 6/3 5/4
f 2/1 3/2 7/3
f 2/1 7/3 6/4
f 3/1 4/2 8/3
f 3/1 8/3 7/4
f 4/1 1/2 5/3
f 4/1 5/3 8/4
"""

CUBE_MTL = """\
newmtl painted
Kd 1 1 1
map_Kd checker.png
"""


def write_cube_asset(directory, texture_color=None):
    """Write cube.obj + cube.mtl + checker.png into directory; returns obj path."""
    (directory / "cube.obj").write_text(CUBE_OBJ)
    (directory / "cube.mtl").write_text(CUBE_MTL)
    if texture_color is None:
        tex = np.zeros((16, 16, 3), dtype=np.uint8)
        tex[::2, ::2] = 255
        tex[1::2, 1::2] = 255
    else:
        tex = np.full((16, 16, 3), texture_color, dtype=np.uint8)
    Image.fromarray(tex).save(directory / "checker.png")
    return directory / "cube.obj"


@pytest.fixture
def cube_obj(tmp_path):
    return write_cube_asset(tmp_path)


@pytest.fixture
def flat_cube_obj(tmp_path):
    """Cube with a constant mid-gray texture (128 in sRGB bytes)."""
    return write_cube_asset(tmp_path, texture_color=128)
