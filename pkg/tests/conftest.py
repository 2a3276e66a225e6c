import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from scenes import desk_scene, unit_cube  # noqa: E402

from sweeper.backends import BackendSet, MockBackend  # noqa: E402


@pytest.fixture(scope="session")
def cube_obj(tmp_path_factory):
    from scenes import SceneBuilder

    b = SceneBuilder("cube")
    b.add_box("cube", (0, 0, 0), (1, 1, 1), (0.6, 0.4, 0.2))
    return b.write_obj(tmp_path_factory.mktemp("meshes") / "cube.obj")


@pytest.fixture(scope="session")
def desk_obj(tmp_path_factory):
    return desk_scene(seed=0, displays=2).write_obj(
        tmp_path_factory.mktemp("meshes") / "desk.obj"
    )


@pytest.fixture()
def mock_backends():
    return BackendSet.single(MockBackend())


@pytest.fixture(scope="session")
def cube_mesh():
    return unit_cube()
