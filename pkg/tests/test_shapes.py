import numpy as np
import pytest

from mvsk.shapes import CATEGORIES, box_mesh, icosphere, make_shape, revolve, signed_volume


def edge_counts(mesh):
    F = mesh.triangles
    e = np.sort(np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return counts


def directed_edges_unique(mesh):
    F = mesh.triangles
    e = np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]])
    return len(np.unique(e, axis=0)) == len(e)


@pytest.mark.parametrize("category", CATEGORIES)
def test_parts_closed_and_outward(category):
    mesh = make_shape(category, np.random.default_rng(0))
    # every edge is shared by exactly two faces with opposite orientation
    assert np.all(edge_counts(mesh) == 2)
    assert directed_edges_unique(mesh)
    assert signed_volume(mesh.vertices, mesh.triangles) > 0


@pytest.mark.parametrize("category", CATEGORIES)
def test_normalized(category):
    for s in range(5):
        mesh = make_shape(category, np.random.default_rng(s))
        r = np.linalg.norm(mesh.vertices, axis=1)
        assert r.max() == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(mesh.centroid(), 0.0, atol=1e-9)


@pytest.mark.parametrize("category", CATEGORIES)
def test_seeded(category):
    a = make_shape(category, np.random.default_rng(3))
    b = make_shape(category, np.random.default_rng(3))
    c = make_shape(category, np.random.default_rng(4))
    np.testing.assert_array_equal(a.vertices, b.vertices)
    assert a.vertices.shape != c.vertices.shape or not np.array_equal(a.vertices, c.vertices)


def test_unknown_category():
    with pytest.raises(ValueError):
        make_shape("teapot", np.random.default_rng(0))


def test_primitive_volumes():
    b = box_mesh([0, 0, 0], [1, 2, 3])
    assert signed_volume(b.vertices, b.triangles) == pytest.approx(6.0)
    s = icosphere(5)
    assert signed_volume(s.vertices, s.triangles) == pytest.approx(4 / 3 * np.pi, rel=2e-3)
    cyl = revolve([(0, 0), (1, 0), (1, 1), (0, 1)], segments=256)
    assert signed_volume(cyl.vertices, cyl.triangles) == pytest.approx(np.pi, rel=1e-3)
    assert np.all(edge_counts(cyl) == 2)
