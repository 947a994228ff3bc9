import pytest

from hoiforge.config import ASSETS_DIR, load_config

SMALL_INI = """
[camera]
fx = 200
fy = 200
cx = 80
cy = 60
width = 160
height = 120

[trajectory]
frame_count = 9

[conditioning]
mask_probability = {mask_probability}
tracklet_count = 20

[seeds]
encoder = 0
mask = 1
tracklet = 2
injection = 3
noise = 4

[assets]
object_mesh = {object_mesh}
endpoints = {endpoints}

[output]
directory = {output}
"""


@pytest.fixture
def write_config(tmp_path):
    """Factory for a 9-frame 160 x 120 config over the bundled assets"""

    def write(name="small.ini", mask_probability=0.2, object_mesh=ASSETS_DIR / "cube.obj"):
        path = tmp_path / name
        path.write_text(SMALL_INI.format(
            mask_probability=mask_probability,
            object_mesh=object_mesh,
            endpoints=ASSETS_DIR / "endpoints.json",
            output=tmp_path / "out",
        ))
        return path

    return write


@pytest.fixture
def small_config(write_config):
    return load_config(write_config())
