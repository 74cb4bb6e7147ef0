"""Reference ray caster and synthetic scenes with known WVIs.

The ray caster shares nothing with the rasterizer beyond the camera
definition and the centroid-distance layer split: one ray per pixel center,
exhaustive Moller-Trumbore tests against every triangle, nearest hit wins
and equal distances go to the lower triangle index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import UnknownFixtureError
from .ingest import Mesh, WindowSpec
from .labels import SemanticLabel
from .render import CameraParams, CameraPose, ColoredScene, ViewImage, prepare_scene
from .transfer import LabeledMesh

SKY = int(SemanticLabel.SKY)
G, W, C = (int(SemanticLabel.GREENERY), int(SemanticLabel.WATERBODY),
           int(SemanticLabel.CONSTRUCTION))


@dataclass(frozen=True)
class RayHit:
    triangle: int
    distance: float
    label: SemanticLabel


@numba.njit(cache=True, nogil=True)
def _intersect(orig, d, tris, t_idx, near, far):
    """Nearest hit parameter (forward depth) and triangle along one ray."""
    best_t = np.inf
    best = -1
    eps = 1e-14
    for a in range(t_idx.shape[0]):
        i = t_idx[a]
        v0x, v0y, v0z = tris[i, 0, 0], tris[i, 0, 1], tris[i, 0, 2]
        e1x, e1y, e1z = tris[i, 1, 0] - v0x, tris[i, 1, 1] - v0y, tris[i, 1, 2] - v0z
        e2x, e2y, e2z = tris[i, 2, 0] - v0x, tris[i, 2, 1] - v0y, tris[i, 2, 2] - v0z
        px = d[1] * e2z - d[2] * e2y
        py = d[2] * e2x - d[0] * e2z
        pz = d[0] * e2y - d[1] * e2x
        det = e1x * px + e1y * py + e1z * pz
        scale = math.sqrt((e1x * e1x + e1y * e1y + e1z * e1z)
                          * (e2x * e2x + e2y * e2y + e2z * e2z))
        if abs(det) <= eps * scale:
            continue
        inv = 1.0 / det
        sx, sy, sz = orig[0] - v0x, orig[1] - v0y, orig[2] - v0z
        u = (sx * px + sy * py + sz * pz) * inv
        if u < 0.0 or u > 1.0:
            continue
        qx = sy * e1z - sz * e1y
        qy = sz * e1x - sx * e1z
        qz = sx * e1y - sy * e1x
        v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
        if v < 0.0 or u + v > 1.0:
            continue
        t = (e2x * qx + e2y * qy + e2z * qz) * inv
        if t < near or t > far:
            continue
        if t < best_t:
            best_t = t
            best = i
    return best, best_t


@numba.njit(cache=True, nogil=True)
def _cast_all(orig, fwd, right, up, focal, width, height, tris, t_idx, near, far, out):
    d = np.empty(3)
    for r in range(height):
        vy = -(r + 0.5 - height * 0.5) / focal
        for c in range(width):
            vx = (c + 0.5 - width * 0.5) / focal
            for k in range(3):
                d[k] = fwd[k] + vx * right[k] + vy * up[k]
            out[r, c] = _intersect(orig, d, tris, t_idx, near, far)[0]


def raycast_ids(scene, cam: CameraPose) -> np.ndarray:
    prep = prepare_scene(scene)
    p = cam.params
    out = np.full((p.height, p.width), -1, dtype=np.int64)
    active = prep.active(cam.position).astype(np.int64)
    if len(active):
        _cast_all(np.asarray(cam.position, dtype=np.float64), cam.forward, cam.right,
                  cam.up, cam.focal_px, p.width, p.height, prep.tris, active,
                  p.near_m, p.far_m, out)
    return out


def raycast_view(scene, cam: CameraPose) -> ViewImage:
    prep = prepare_scene(scene)
    ids = raycast_ids(prep, cam)
    labels = np.full(ids.shape, SKY, dtype=np.int8)
    labels[ids >= 0] = prep.labels[ids[ids >= 0]]
    return ViewImage.from_labels(labels)


def raycast_pixel(scene, cam: CameraPose, col: int, row: int) -> RayHit | None:
    """Nearest hit through one pixel center; ``distance`` is along the ray in meters."""
    prep = prepare_scene(scene)
    active = prep.active(cam.position).astype(np.int64)
    d = cam.pixel_ray(col, row)
    i, t = _intersect(np.asarray(cam.position, dtype=np.float64), d, prep.tris, active,
                      cam.params.near_m, cam.params.far_m)
    if i < 0:
        return None
    return RayHit(int(i), float(t * np.linalg.norm(d)), SemanticLabel(int(prep.labels[i])))


def silhouette_mask(ids: np.ndarray) -> np.ndarray:
    """Pixels whose 8-neighborhood shows more than one surface (or sky)."""
    pad = np.pad(ids, 1, mode="edge")
    h, w = ids.shape
    edge = np.zeros(ids.shape, dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            edge |= pad[1 + dr:1 + dr + h, 1 + dc:1 + dc + w] != ids
    return edge


# --------------------------------------------------------------------------
# scene building blocks


class MeshBuilder:
    """Accumulates labeled triangles, one label per triangle."""

    def __init__(self):
        self.vertices = []
        self.triangles = []
        self.labels = []

    def quad(self, a, b, c, d, label):
        """Quad a-b-c-d split along a-c; vertices are not shared with other quads."""
        base = len(self.vertices)
        self.vertices += [a, b, c, d]
        self.triangles += [(base, base + 1, base + 2), (base, base + 2, base + 3)]
        self.labels += [label, label, label, label]

    def grid_quad(self, origin, u, v, nu, nv, label):
        """Planar quad origin + [0,1]u + [0,1]v as an nu x nv grid of shared vertices."""
        origin, u, v = (np.asarray(x, dtype=np.float64) for x in (origin, u, v))
        base = len(self.vertices)
        for j in range(nv + 1):
            for i in range(nu + 1):
                self.vertices.append(tuple(origin + u * (i / nu) + v * (j / nv)))
                self.labels.append(label)
        for j in range(nv):
            for i in range(nu):
                a = base + j * (nu + 1) + i
                b, c, d = a + 1, a + nu + 2, a + nu + 1
                self.triangles += [(a, b, c), (a, c, d)]

    def box(self, lo, hi, label, subdiv=1):
        """Axis-aligned box with each face split into ``subdiv`` x ``subdiv`` quads."""
        x0, y0, z0 = lo
        x1, y1, z1 = hi
        dx, dy, dz = x1 - x0, y1 - y0, z1 - z0
        faces = [
            ((x0, y0, z0), (dx, 0, 0), (0, 0, dz)),  # south
            ((x1, y1, z0), (-dx, 0, 0), (0, 0, dz)),  # north
            ((x1, y0, z0), (0, dy, 0), (0, 0, dz)),  # east
            ((x0, y1, z0), (0, -dy, 0), (0, 0, dz)),  # west
            ((x0, y0, z1), (dx, 0, 0), (0, dy, 0)),  # roof
            ((x0, y1, z0), (dx, 0, 0), (0, -dy, 0)),  # floor
        ]
        for o, u, v in faces:
            self.grid_quad(o, u, v, subdiv, subdiv, label)

    def build(self) -> LabeledMesh:
        if not self.triangles:
            return LabeledMesh.empty()
        mesh = Mesh(np.array(self.vertices, dtype=np.float64),
                    np.array(self.triangles, dtype=np.int64))
        return LabeledMesh.from_vertex_labels(mesh, np.array(self.labels, dtype=np.int8))


def rotate_scene(scene: ColoredScene, center, delta_deg) -> ColoredScene:
    """Rotate the scene clockwise (seen from above) by ``delta_deg`` about a vertical axis.

    Pairs with adding ``delta_deg`` to a camera heading at ``center``.
    """
    a = math.radians(delta_deg)
    ca, sa = math.cos(a), math.sin(a)
    rot = np.array([[ca, sa, 0.0], [-sa, ca, 0.0], [0.0, 0.0, 1.0]])
    cx, cy, _ = center

    def rot_mesh(lm):
        if lm.mesh.n_vertices == 0:
            return lm
        v = lm.mesh.vertices - np.array([cx, cy, 0.0])
        v = v @ rot.T + np.array([cx, cy, 0.0])
        return LabeledMesh(Mesh(v, lm.mesh.triangles), lm.vertex_labels, lm.triangle_labels)

    return ColoredScene(rot_mesh(scene.near_mesh), rot_mesh(scene.far_mesh), scene.cutoff_m)


# --------------------------------------------------------------------------
# fixtures


@dataclass
class Fixture:
    name: str
    scene: ColoredScene
    windows: list[WindowSpec]
    params: CameraParams
    expected: tuple[float, float, float, float] | None = None  # per window, label order
    tolerance: float | None = None


FIXTURES = ("empty-sky", "full-wall", "half-wall", "quad-split", "synthetic-city")

_EYE = (0.0, 0.0, 1.5)


def _wall_half_extent(distance, params):
    """Half-size a wall at ``distance`` needs to cover the whole frustum, with margin."""
    f = (params.height / 2.0) / math.tan(math.radians(params.fov_deg) / 2.0)
    half = max(params.width, params.height) / 2.0 / f * distance
    return 2.0 * half + 1.0


def _empty_sky(params):
    scene = ColoredScene.near_only(LabeledMesh.empty())
    return Fixture("empty-sky", scene, [WindowSpec("w0", _EYE, 0.0)], params,
                   (0.0, 0.0, 1.0, 0.0), 0.0)


def _full_wall(params, dist=10.0):
    x, y, z = _EYE
    L = _wall_half_extent(dist, params)
    b = MeshBuilder()
    b.quad((x - L, y + dist, z - L), (x + L, y + dist, z - L),
           (x + L, y + dist, z + L), (x - L, y + dist, z + L), C)
    scene = ColoredScene.near_only(b.build())
    return Fixture("full-wall", scene, [WindowSpec("w0", _EYE, 0.0)], params,
                   (0.0, 0.0, 0.0, 1.0), 0.0)


def _half_wall(params, dist=10.0):
    # Right edge at x = eye x projects onto the vertical image centerline.
    x, y, z = _EYE
    L = _wall_half_extent(dist, params)
    b = MeshBuilder()
    b.quad((x - L, y + dist, z - L), (x, y + dist, z - L),
           (x, y + dist, z + L), (x - L, y + dist, z + L), C)
    scene = ColoredScene.near_only(b.build())
    return Fixture("half-wall", scene, [WindowSpec("w0", _EYE, 0.0)], params,
                   (0.0, 0.0, 0.5, 0.5), 2.0 / params.width)


def _quad_split(params, dist=10.0, height=10.0, depth=10_000.0):
    """Four quadrants: construction upper-left, greenery lower-left,
    waterbody lower-right (ground plane), sky upper-right.

    Walls stand at ``dist`` left of the view axis, split at eye level so the
    boundary lands on the horizon row. The water plane lies ``height`` below
    the eye, starting at x = eye x (the centerline) and running to ``depth``
    meters ahead, so it fills the lower-right quadrant up to within
    focal * height / depth pixels of the horizon.
    """
    x, y, z = _EYE
    L = _wall_half_extent(dist, params)
    b = MeshBuilder()
    b.quad((x - L, y + dist, z), (x, y + dist, z),
           (x, y + dist, z + L), (x - L, y + dist, z + L), C)
    b.quad((x - L, y + dist, z - L), (x, y + dist, z - L),
           (x, y + dist, z), (x - L, y + dist, z), G)
    g = z - height
    span = 2.0 * depth
    b.quad((x, y + 0.5, g), (x + span, y + 0.5, g),
           (x + span, y + depth, g), (x, y + depth, g), W)
    # Everything is one near-field layer; lift the cutoff past the water plane.
    scene = ColoredScene.near_only(b.build(), cutoff_m=4.0 * depth)
    return Fixture("quad-split", scene, [WindowSpec("w0", _EYE, 0.0)], params,
                   (0.25, 0.25, 0.25, 0.25), 0.01)


def random_boxes_scene(seed, n_boxes=20, extent=60.0, subdiv=1, ground=True):
    """Non-intersecting labeled boxes on a jittered grid around the origin.

    The origin column is kept clear so a camera there sits in open space.
    """
    rng = np.random.default_rng(seed)
    b = MeshBuilder()
    side = int(math.ceil(math.sqrt(n_boxes + 1)))
    cell = 2.0 * extent / side
    slots = [(i, j) for i in range(side) for j in range(side)]
    centre = (side // 2, side // 2)
    slots = [s for s in slots if s != centre]
    order = rng.permutation(len(slots))[:n_boxes]
    labels = (G, W, C)
    for k in order:
        i, j = slots[k]
        x0 = -extent + i * cell
        y0 = -extent + j * cell
        w = rng.uniform(0.3, 0.8) * cell
        d = rng.uniform(0.3, 0.8) * cell
        ox = rng.uniform(0.05, 0.95 - w / cell) * cell
        oy = rng.uniform(0.05, 0.95 - d / cell) * cell
        lo = (x0 + ox, y0 + oy, rng.uniform(-3.0, 0.0))
        hi = (lo[0] + w, lo[1] + d, rng.uniform(3.0, 40.0))
        b.box(lo, hi, int(labels[rng.integers(0, 3)]), subdiv=subdiv)
    if ground:
        b.grid_quad((-2 * extent, -2 * extent, -4.0), (4 * extent, 0, 0), (0, 4 * extent, 0),
                    4, 4, W)
    return ColoredScene.near_only(b.build())


def random_scene_windows(seed, n=4, height=1.5):
    rng = np.random.default_rng(seed + 7919)
    # Headings on a 0.5 degree lattice keep the manifest stable under repr.
    return [WindowSpec(f"w{k}", (0.0, 0.0, height), float(rng.integers(0, 720)) / 2.0)
            for k in range(n)]


def synthetic_city(seed=0, n_blocks=10, block=40.0, street=16.0, subdiv=4,
                   terrain_cells=60, terrain_cell=100.0, n_windows=10, cutoff_m=2000.0):
    """City of labeled boxes on a street grid, plus a far-field DSM terrain ring.

    Buildings are construction, plazas greenery; a DSM heightfield beyond the
    city carries greenery, construction and waterbody cells. Windows sit 0.5 m
    in front of building facades, facing outward.

    Returns:
        (scene, windows)
    """
    from .distant import dsm_to_labeled_mesh, LabelRaster
    from .ingest import GeoRaster

    rng = np.random.default_rng(seed)
    b = MeshBuilder()
    pitch = block + street
    half = n_blocks * pitch / 2.0
    facades = []
    for i in range(n_blocks):
        for j in range(n_blocks):
            x0 = -half + i * pitch + street / 2
            y0 = -half + j * pitch + street / 2
            if rng.random() < 0.15:
                b.grid_quad((x0, y0, 0.2), (block, 0, 0), (0, block, 0), subdiv, subdiv, G)
                continue
            # Two or three towers per block, with at least 4 m between them.
            n_t = int(rng.integers(1, 3))
            w = (block - 4.0 * (n_t - 1)) / n_t
            for t in range(n_t):
                lo = (x0 + t * (w + 4.0), y0 + rng.uniform(0, 4.0), 0.0)
                hi = (lo[0] + w, lo[1] + rng.uniform(0.6, 0.9) * (block - 4.0),
                      float(rng.uniform(15, 120)))
                b.box(lo, hi, C, subdiv=subdiv)
                facades.append((lo, hi))
    b.grid_quad((-half, -half, -0.5), (2 * half, 0, 0), (0, 2 * half, 0), 8, 8, C)
    near = b.build()

    n = terrain_cells
    ox = oy = -n * terrain_cell / 2.0
    gx, gy = np.meshgrid(ox + (np.arange(n) + 0.5) * terrain_cell,
                         oy + (np.arange(n) + 0.5) * terrain_cell)
    r = np.hypot(gx, gy)
    heights = 20.0 + 60.0 * np.sin(gx / 900.0) * np.cos(gy / 700.0) + rng.normal(0, 3, gx.shape)
    labels = np.where(heights > 45.0, G, C).astype(np.int8)
    sea = gy < oy + 0.25 * n * terrain_cell
    heights = np.where(sea, -2.0, heights)
    labels[sea] = W
    nodata = -9999.0
    # No terrain under the city itself.
    heights = np.where(r < half + 2 * terrain_cell, nodata, heights)
    dsm = GeoRaster(n, n, ox, oy, terrain_cell, nodata, heights)
    far = dsm_to_labeled_mesh(dsm, LabelRaster(dsm, labels))
    scene = ColoredScene(near, far, cutoff_m)

    windows = []
    dirs = ((0.0, 180.0), (1.0, 0.0), (2.0, 90.0), (3.0, 270.0))
    for k in range(n_windows):
        lo, hi = facades[int(rng.integers(0, len(facades)))]
        side, heading = dirs[int(rng.integers(0, 4))]
        z = float(rng.uniform(2.0, hi[2] - 1.0))
        u = float(rng.uniform(0.2, 0.8))
        if side == 0:
            pos = (lo[0] + u * (hi[0] - lo[0]), lo[1] - 0.5, z)
        elif side == 1:
            pos = (lo[0] + u * (hi[0] - lo[0]), hi[1] + 0.5, z)
        elif side == 2:
            pos = (hi[0] + 0.5, lo[1] + u * (hi[1] - lo[1]), z)
        else:
            pos = (lo[0] - 0.5, lo[1] + u * (hi[1] - lo[1]), z)
        pos = tuple(round(c, 3) for c in pos)
        windows.append(WindowSpec(f"w{k:04d}", pos, heading))
    return scene, windows


def make_fixture(name: str, params: CameraParams | None = None, **kwargs) -> Fixture:
    """Build a named synthetic scene with its windows and expected WVIs.

    ``expected``/``tolerance`` are None for "synthetic-city", which has no
    closed-form answer and is checked against the ray caster instead.
    """
    params = params or CameraParams()
    if name == "empty-sky":
        return _empty_sky(params)
    if name == "full-wall":
        return _full_wall(params, **kwargs)
    if name == "half-wall":
        return _half_wall(params, **kwargs)
    if name == "quad-split":
        return _quad_split(params, **kwargs)
    if name == "synthetic-city":
        scene, windows = synthetic_city(**kwargs)
        return Fixture(name, scene, windows, params)
    raise UnknownFixtureError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURES)}")
