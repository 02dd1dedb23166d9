import numpy as np
import pytest

from warpfield import primitives
from warpfield.mesh import load_obj


@pytest.fixture(scope="session")
def triangle_mesh():
    return primitives.single_triangle()


@pytest.fixture(scope="session")
def icosphere3():
    return primitives.icosphere(3)


@pytest.fixture(scope="session")
def icosphere2():
    return primitives.icosphere(2)


@pytest.fixture(scope="session")
def quad_plane_mesh(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "plane.obj"
    path.write_text(primitives.quad_plane_obj(4, 3))
    return load_obj(path)


@pytest.fixture(scope="session")
def crumpled_mesh():
    return primitives.crumpled_sphere(subdivisions=2, amplitude=0.1, seed=7)


@pytest.fixture(scope="session")
def corpus(triangle_mesh, quad_plane_mesh, icosphere3, crumpled_mesh):
    """The standard test meshes: triangle, quad plane, icosphere, crumpled."""
    return [triangle_mesh, quad_plane_mesh, icosphere3, crumpled_mesh]


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
