import numpy as np
import pytest

from mvsk.geometry import TriMesh
from mvsk.shapes import box_mesh, icosphere


@pytest.fixture(scope="session")
def sphere():
    """Unit icosphere (radius 1 at the vertices)."""
    return icosphere(4)


@pytest.fixture(scope="session")
def half_sphere():
    return icosphere(4, radius=0.5)


@pytest.fixture(scope="session")
def cube():
    return box_mesh([-0.5, -0.5, -0.5], [0.5, 0.5, 0.5])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_dirs(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def unit_square():
    V = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    return TriMesh(V, [[0, 1, 2], [0, 2, 3]])


SMALL_SPEC = dict(instances=8, views=6, res=64, dims=32)


@pytest.fixture(scope="session")
def small_dataset():
    """4 categories x 8 instances x 6 views at reduced resolution."""
    from mvsk.harness import DatasetSpec, generate_dataset

    return generate_dataset(DatasetSpec(**SMALL_SPEC))
