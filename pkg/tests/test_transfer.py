import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from winview.errors import EmptyCloudError, EmptyMeshError, ValidationError
from winview.ingest import LabeledPointCloud, Mesh
from winview.labels import SemanticLabel
from winview.oracle import MeshBuilder
from winview.transfer import (LabeledMesh, cloud_from_labeled_mesh, derive_triangle_labels,
                              nearest_brute, nearest_indexed, sample_surface, transfer_labels)

G, W, C = 0, 1, 3


def loop_nearest(points, queries):
    """Plain double loop; first strictly smaller distance wins."""
    out = []
    for q in queries:
        best, best_d = -1, np.inf
        for i, p in enumerate(points):
            d = float(np.sum((np.asarray(p) - q) ** 2))
            if d < best_d:
                best, best_d = i, d
        out.append(best)
    return np.array(out)


@pytest.mark.parametrize("labels, expected", [
    ((G, G, C), G),
    ((G, W, C), C),
    ((W, W, W), W),
    ((G, W, W), W),
    ((G, W, G), G),
])
def test_derive_triangle_labels(labels, expected):
    assert derive_triangle_labels(labels, [(0, 1, 2)]).tolist() == [expected]


def test_single_point_cloud():
    mesh = Mesh(np.random.default_rng(0).normal(size=(10, 3)), [(0, 1, 2), (3, 4, 5)])
    lm = transfer_labels(mesh, LabeledPointCloud([(100, 0, 0)], [C]))
    assert set(lm.vertex_labels.tolist()) == {C}
    assert lm.triangle_labels.tolist() == [C, C]


def test_tie_goes_to_lowest_index():
    mesh = Mesh([(0, 0, 0), (5, 0, 0), (0, 5, 0)], [(0, 1, 2)])
    cloud = LabeledPointCloud([(-1, 0, 0), (1, 0, 0), (0, 0, 1)], [G, W, C])
    # vertex 0 is 1 m from all three points.
    for brute in (False, True):
        lm = transfer_labels(mesh, cloud, brute_force=brute)
        assert lm.vertex_labels[0] == G


def test_empty_cloud():
    mesh = Mesh([(0, 0, 0), (1, 0, 0), (0, 1, 0)], [(0, 1, 2)])
    with pytest.raises(EmptyCloudError):
        transfer_labels(mesh, LabeledPointCloud(np.zeros((0, 3)), []))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 300), m=st.integers(1, 60), seed=st.integers(0, 2**31),
       lattice=st.booleans())
def test_indexed_matches_brute_force(n, m, seed, lattice):
    rng = np.random.default_rng(seed)
    if lattice:
        # Integer lattices produce many exact distance ties.
        pts = rng.integers(-3, 4, size=(n, 3)).astype(float)
        qs = rng.integers(-3, 4, size=(m, 3)) + rng.choice([0.0, 0.5], size=(m, 3))
    else:
        pts = rng.normal(size=(n, 3))
        qs = rng.normal(size=(m, 3))
    expect = loop_nearest(pts, qs) if n * m <= 3000 else nearest_brute(pts, qs)
    assert np.array_equal(nearest_brute(pts, qs), expect)
    assert np.array_equal(nearest_indexed(pts, qs), expect)


def test_nearest_is_truly_nearest(rng):
    pts = rng.uniform(-50, 50, size=(10_000, 3))
    qs = rng.uniform(-50, 50, size=(2_000, 3))
    nn = nearest_indexed(pts, qs, workers=2)
    chosen = np.sum((pts[nn] - qs) ** 2, axis=1)
    for k in range(0, len(qs), 97):
        assert chosen[k] <= np.min(np.sum((pts - qs[k]) ** 2, axis=1))
    assert np.array_equal(nn, nearest_brute(pts, qs))
    assert np.array_equal(nn, nearest_indexed(pts, qs, workers=1))


def _right_triangle():
    return Mesh([(0, 0, 0), (1, 0, 0), (0, 2, 0)], [(0, 1, 2)])


def test_sample_count_concentration():
    # legs 1 x 2 -> area 1 m^2; density 1000 -> expected 1000 points.
    counts = [len(sample_surface(_right_triangle(), 1000, seed)) for seed in range(25)]
    assert all(900 <= c <= 1100 for c in counts)


def test_sample_area_weighting():
    # Areas 1 and 3 m^2, 10,000 expected samples in total.
    mesh = Mesh([(0, 0, 0), (1, 0, 0), (0, 2, 0), (10, 0, 0), (13, 0, 0), (10, 2, 0)],
                [(0, 1, 2), (3, 4, 5)])
    _, tri = sample_surface(mesh, 2500, seed=3, return_index=True)
    n0, n1 = np.bincount(tri, minlength=2)
    assert 2.7 <= n1 / n0 <= 3.3


def test_sample_points_lie_on_triangle_and_are_uniform():
    mesh = _right_triangle()
    pts = sample_surface(mesh, 20_000, seed=1)
    x, y = pts[:, 0], pts[:, 1]
    assert np.all(x >= -1e-12) and np.all(y >= -1e-12) and np.all(x + y / 2 <= 1 + 1e-12)
    assert np.allclose(pts[:, 2], 0.0)
    # Uniform density: mean converges to the centroid (1/3, 2/3).
    assert abs(x.mean() - 1 / 3) < 0.01 and abs(y.mean() - 2 / 3) < 0.02


def test_sample_tiny_mesh_may_be_empty():
    mesh = Mesh([(0, 0, 0), (1e-3, 0, 0), (0, 1e-3, 0)], [(0, 1, 2)])
    pts = sample_surface(mesh, 1.0, seed=0)
    assert pts.shape[1] == 3 and len(pts) <= 1


def test_sample_deterministic_and_errors():
    a = sample_surface(_right_triangle(), 500, seed=9)
    b = sample_surface(_right_triangle(), 500, seed=9)
    assert np.array_equal(a, b)
    with pytest.raises(EmptyMeshError):
        sample_surface(Mesh(np.zeros((0, 3)), np.zeros((0, 3))), 10, 0)
    with pytest.raises(ValueError):
        sample_surface(_right_triangle(), 0, 0)


def two_box_scene():
    b = MeshBuilder()
    b.box((0, 0, 0), (6, 4, 10), C, subdiv=3)
    b.box((20, 0, 0), (26, 5, 3), G, subdiv=3)
    return b.build()


@pytest.mark.parametrize("density", [100, 250])
def test_round_trip_two_boxes(density):
    lm = two_box_scene()
    cloud = cloud_from_labeled_mesh(lm, density, seed=4)
    back = transfer_labels(lm.mesh, cloud)
    assert np.array_equal(back.vertex_labels, lm.vertex_labels)
    assert np.array_equal(back.triangle_labels, lm.triangle_labels)


def test_transfer_is_a_fixed_point():
    lm = two_box_scene()
    first = transfer_labels(lm.mesh, cloud_from_labeled_mesh(lm, 100, seed=1))
    second = transfer_labels(lm.mesh, cloud_from_labeled_mesh(first, 100, seed=2))
    assert first == second


def test_labeled_mesh_invariants():
    mesh = Mesh([(0, 0, 0), (1, 0, 0), (0, 1, 0)], [(0, 1, 2)])
    with pytest.raises(ValidationError):
        LabeledMesh(mesh, [0, 0], [0])
    with pytest.raises(ValidationError):
        LabeledMesh(mesh, [0, 0, 0], [2])
    lm = LabeledMesh.from_vertex_labels(mesh, [C, G, G])
    assert lm.triangle_labels.tolist() == [SemanticLabel.GREENERY]
