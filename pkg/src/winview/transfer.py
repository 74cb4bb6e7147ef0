"""Labeled meshes, surface sampling and nearest-point label transfer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloudError, EmptyMeshError, ValidationError
from .ingest import LabeledPointCloud, Mesh, load_mesh_labels, save_mesh
from .labels import SemanticLabel, check_geometry_codes

# Relative slack used to collect every candidate that might tie with the
# tree's nearest point; the final choice is made on exact float64 distances.
_TIE_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class LabeledMesh:
    mesh: Mesh
    vertex_labels: np.ndarray
    triangle_labels: np.ndarray

    def __post_init__(self):
        vl = check_geometry_codes(np.asarray(self.vertex_labels).reshape(-1))
        tl = check_geometry_codes(np.asarray(self.triangle_labels).reshape(-1))
        if len(vl) != self.mesh.n_vertices:
            raise ValidationError(
                f"{len(vl)} vertex labels for {self.mesh.n_vertices} vertices")
        if len(tl) != self.mesh.n_triangles:
            raise ValidationError(
                f"{len(tl)} triangle labels for {self.mesh.n_triangles} triangles")
        vl.setflags(write=False)
        tl.setflags(write=False)
        object.__setattr__(self, "vertex_labels", vl)
        object.__setattr__(self, "triangle_labels", tl)

    @classmethod
    def from_vertex_labels(cls, mesh: Mesh, vertex_labels) -> "LabeledMesh":
        vl = check_geometry_codes(np.asarray(vertex_labels).reshape(-1))
        if len(vl) != mesh.n_vertices:
            raise ValidationError(f"{len(vl)} vertex labels for {mesh.n_vertices} vertices")
        return cls(mesh, vl, derive_triangle_labels(vl, mesh.triangles))

    @classmethod
    def empty(cls) -> "LabeledMesh":
        return cls(Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)),
                   np.zeros(0, np.int8), np.zeros(0, np.int8))

    def __eq__(self, other):
        if not isinstance(other, LabeledMesh):
            return NotImplemented
        return (self.mesh == other.mesh
                and np.array_equal(self.vertex_labels, other.vertex_labels)
                and np.array_equal(self.triangle_labels, other.triangle_labels))

    __hash__ = None


def load_labeled_mesh(path) -> LabeledMesh:
    """Read a labeled PLY mesh.

    Triangle labels come from a face ``label`` property when the file has
    one, otherwise from the vertex labels by majority.
    """
    mesh, labels, face_labels = load_mesh_labels(path)
    if labels is None:
        raise ValidationError(f"{path}: mesh has no 'label' vertex property")
    if face_labels is None:
        return LabeledMesh.from_vertex_labels(mesh, labels)
    return LabeledMesh(mesh, labels, face_labels)


def save_labeled_mesh(path, lm: LabeledMesh, binary=True):
    """Write vertex and triangle labels, so reloading gives back the same mesh."""
    save_mesh(path, lm.mesh, lm.vertex_labels, binary=binary, face_labels=lm.triangle_labels)


def derive_triangle_labels(vertex_labels, triangles) -> np.ndarray:
    """Majority label of each triangle's three vertices.

    When all three differ the triangle goes to the highest-priority label
    present: construction, then greenery, then waterbody.

    >>> derive_triangle_labels([0, 1, 3], [[0, 1, 2]]).tolist()
    [3]
    """
    vl = np.asarray(vertex_labels, dtype=np.int8)
    tris = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if not len(tris):
        return np.zeros(0, dtype=np.int8)
    a, b, c = (vl[tris[:, k]] for k in range(3))
    out = np.where((a == b) | (a == c), a, np.where(b == c, b, -1)).astype(np.int8)
    split = out < 0
    if np.any(split):
        three = np.stack([a[split], b[split], c[split]], axis=1)
        pick = np.full(len(three), -1, dtype=np.int8)
        for label in (SemanticLabel.WATERBODY, SemanticLabel.GREENERY,
                      SemanticLabel.CONSTRUCTION):
            pick[np.any(three == label, axis=1)] = label
        out[split] = pick
    return out


def sample_surface(mesh: Mesh, density: float, seed: int, return_index=False):
    """Sample points uniformly by area over the mesh surface.

    Each triangle gets ``floor(area * density)`` points plus one more with
    probability equal to the fractional remainder, so the expected count is
    exactly ``area * density``. Points are uniform within each triangle.

    Args:
        mesh: Source surface.
        density: Points per square meter, > 0.
        seed: Seed for the generator; output is a pure function of it.
        return_index: Also return the source triangle of every point.

    Returns:
        (K, 3) float64 points, and optionally a (K,) int64 triangle index.
    """
    if not density > 0:
        raise ValueError(f"density must be > 0, got {density}")
    if mesh.n_triangles == 0:
        raise EmptyMeshError("cannot sample an empty mesh")
    rng = np.random.default_rng(seed)
    expected = mesh.triangle_areas() * density
    base = np.floor(expected)
    counts = (base + (rng.random(len(expected)) < expected - base)).astype(np.int64)
    tri_idx = np.repeat(np.arange(mesh.n_triangles), counts)
    u = rng.random(len(tri_idx))
    v = rng.random(len(tri_idx))
    su = np.sqrt(u)
    tri = mesh.triangles[tri_idx]
    a, b, c = (mesh.vertices[tri[:, k]] for k in range(3))
    pts = (1 - su)[:, None] * a + (su * (1 - v))[:, None] * b + (su * v)[:, None] * c
    if return_index:
        return pts, tri_idx
    return pts


def nearest_brute(points, queries) -> np.ndarray:
    """Index of the nearest point for every query by exhaustive search.

    Ties go to the lowest point index (``argmin`` keeps the first minimum).
    """
    points = np.asarray(points, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    out = np.empty(len(queries), dtype=np.int64)
    block = max(1, 4_000_000 // max(len(points), 1))
    for s in range(0, len(queries), block):
        q = queries[s:s + block]
        d2 = _sqdist(points[None, :, :], q[:, None, :])
        out[s:s + block] = np.argmin(d2, axis=1)
    return out


def _sqdist(p, q):
    d = p - q
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


def nearest_indexed(points, queries, workers=1) -> np.ndarray:
    """Exact nearest neighbor via a kd-tree, with lowest-index tie breaking.

    Agrees with :func:`nearest_brute` element for element: the tree proposes
    candidates, and any query whose two closest candidates are within a
    relative ``_TIE_RTOL`` is resolved on the same float64 distance formula
    the brute-force path uses.
    """
    points = np.asarray(points, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    if len(points) == 1:
        return np.zeros(len(queries), dtype=np.int64)
    tree = cKDTree(points)
    dist, idx = tree.query(queries, k=2, workers=workers)
    out = idx[:, 0].astype(np.int64)
    close = dist[:, 1] <= dist[:, 0] * (1 + _TIE_RTOL) + 1e-12
    for qi in np.flatnonzero(close):
        q = queries[qi]
        cand = np.array(tree.query_ball_point(q, dist[qi, 1] * (1 + 2 * _TIE_RTOL) + 1e-12),
                        dtype=np.int64)
        cand.sort()
        d2 = _sqdist(points[cand], q)
        out[qi] = cand[np.argmin(d2)]
    return out


def transfer_labels(mesh: Mesh, cloud: LabeledPointCloud, brute_force=False,
                    workers=1) -> LabeledMesh:
    """Give each vertex the label of its closest cloud point.

    Args:
        brute_force: Use exhaustive search instead of the kd-tree. Both give
            identical answers; the brute-force path is the reference.
    """
    if cloud is None or len(cloud) == 0:
        raise EmptyCloudError("label transfer needs a non-empty point cloud")
    if mesh.n_vertices == 0:
        return LabeledMesh(mesh, np.zeros(0, np.int8), np.zeros(mesh.n_triangles, np.int8))
    if brute_force:
        nn = nearest_brute(cloud.points, mesh.vertices)
    else:
        nn = nearest_indexed(cloud.points, mesh.vertices, workers=workers)
    return LabeledMesh.from_vertex_labels(mesh, cloud.labels[nn])


def cloud_from_labeled_mesh(lm: LabeledMesh, density: float, seed: int) -> LabeledPointCloud:
    """Sample a labeled mesh; each point inherits its triangle's label."""
    pts, tri = sample_surface(lm.mesh, density, seed, return_index=True)
    return LabeledPointCloud(pts, lm.triangle_labels[tri])
