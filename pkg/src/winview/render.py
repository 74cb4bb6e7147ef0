"""Camera placement and a deterministic four-color software rasterizer.

Camera frame: forward = (sin h, cos h, 0) for heading h clockwise from
north, up = +z, right = forward x up. Pitch and roll are always zero.

Rasterization rules:

* triangles are clipped in camera space against the near plane and a wide
  guard band around the side planes, then projected;
* screen coordinates are snapped to 1/256 pixel and coverage is decided by
  integer edge functions at pixel centers with a top-left fill rule, so
  triangles sharing an edge neither overlap nor leave gaps;
* depth is 1/z interpolated in screen space; the depth test is strict
  less-than, and an exact depth tie goes to the lower draw index whatever
  order triangles are submitted in;
* no blending, lighting or anti-aliasing: each pixel is either the sky
  background or the flat color of exactly one triangle.
"""

from __future__ import annotations

import math
import threading
from collections import Counter
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ParseError, ValidationError
from .ingest import WindowSpec
from .labels import PALETTE_ARRAY, SemanticLabel
from .transfer import LabeledMesh

SUBPIXEL_BITS = 8
_SUB = 1 << SUBPIXEL_BITS
# Side clip planes sit this many image widths outside the viewport.
GUARD_BAND = 2.0

SKY = int(SemanticLabel.SKY)

# Instrumentation counters (scene preparations, renders); see reset_stats().
STATS: Counter = Counter()
_stats_lock = threading.Lock()


def _bump(key, n=1):
    with _stats_lock:
        STATS[key] += n


def reset_stats():
    with _stats_lock:
        STATS.clear()


@dataclass(frozen=True)
class CameraParams:
    fov_deg: float = 60.0
    width: int = 900
    height: int = 900
    near_m: float = 0.1
    far_m: float = 20_000.0

    def __post_init__(self):
        if not 0.0 < self.fov_deg < 180.0:
            raise ValidationError(f"fov_deg must be in (0, 180), got {self.fov_deg}")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("image size must be positive")
        if not self.near_m > 0:
            raise ValidationError(f"near_m must be > 0, got {self.near_m}")
        if not self.far_m > self.near_m:
            raise ValidationError("far_m must exceed near_m")


@dataclass(frozen=True)
class CameraPose:
    position: tuple[float, float, float]
    heading_deg: float
    params: CameraParams = field(default_factory=CameraParams)

    pitch_deg = 0.0
    tilt_deg = 0.0

    @property
    def forward(self) -> np.ndarray:
        h = math.radians(self.heading_deg)
        return np.array([math.sin(h), math.cos(h), 0.0])

    @property
    def right(self) -> np.ndarray:
        h = math.radians(self.heading_deg)
        return np.array([math.cos(h), -math.sin(h), 0.0])

    @property
    def up(self) -> np.ndarray:
        return np.array([0.0, 0.0, 1.0])

    @property
    def focal_px(self) -> float:
        """Focal length in pixels for the vertical field of view."""
        return (self.params.height / 2.0) / math.tan(math.radians(self.params.fov_deg) / 2.0)

    def pixel_ray(self, col, row) -> np.ndarray:
        """Direction through a pixel center, scaled so its forward component is 1."""
        f = self.focal_px
        p = self.params
        dx = (col + 0.5 - p.width / 2.0) / f
        dy = -(row + 0.5 - p.height / 2.0) / f
        return self.forward + dx * self.right + dy * self.up


def place_camera(window: WindowSpec, params: CameraParams | None = None) -> CameraPose:
    return CameraPose(tuple(window.position), window.heading_deg, params or CameraParams())


@dataclass(frozen=True, eq=False)
class ViewImage:
    """8-bit RGB image, ``pixels[row, col]`` with row 0 at the top."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise ValueError("pixels must be an (H, W, 3) uint8 array")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.width * self.height

    @classmethod
    def from_labels(cls, label_buf) -> "ViewImage":
        return cls(PALETTE_ARRAY[np.asarray(label_buf)])

    def __eq__(self, other):
        if not isinstance(other, ViewImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True)
class ColoredScene:
    near_mesh: LabeledMesh
    far_mesh: LabeledMesh
    cutoff_m: float = 2000.0

    def __post_init__(self):
        if not self.cutoff_m > 0:
            raise ValidationError(f"cutoff_m must be > 0, got {self.cutoff_m}")

    @classmethod
    def near_only(cls, mesh: LabeledMesh, cutoff_m=2000.0) -> "ColoredScene":
        return cls(mesh, LabeledMesh.empty(), cutoff_m)


class PreparedScene:
    """Flat per-triangle arrays in draw order: near-field first, then far-field.

    Built once per batch and shared read-only by every render.
    """

    def __init__(self, scene: ColoredScene):
        parts = []
        for lm in (scene.near_mesh, scene.far_mesh):
            m = lm.mesh
            parts.append(m.vertices[m.triangles] if m.n_triangles else np.zeros((0, 3, 3)))
        self.n_near = len(parts[0])
        self.tris = np.ascontiguousarray(np.concatenate(parts), dtype=np.float64)
        self.labels = np.concatenate(
            [scene.near_mesh.triangle_labels, scene.far_mesh.triangle_labels]).astype(np.int8)
        self.centroids = self.tris.mean(axis=1)
        self.is_far = np.zeros(len(self.tris), dtype=bool)
        self.is_far[self.n_near:] = True
        self.cutoff_m = float(scene.cutoff_m)
        for arr in (self.tris, self.labels, self.centroids, self.is_far):
            arr.setflags(write=False)
        _bump("prepare_scene")

    @property
    def n_triangles(self) -> int:
        return len(self.tris)

    def active(self, position) -> np.ndarray:
        """Draw indices surviving the centroid-distance layer split."""
        d = np.linalg.norm(self.centroids - np.asarray(position, dtype=np.float64), axis=1)
        keep = np.where(self.is_far, d >= self.cutoff_m, d <= self.cutoff_m)
        return np.flatnonzero(keep)


def prepare_scene(scene) -> PreparedScene:
    if isinstance(scene, PreparedScene):
        return scene
    return PreparedScene(scene)


# --------------------------------------------------------------------------
# kernel


@numba.njit(cache=True, nogil=True)
def _clip_poly(poly, n, plane, out):
    """Clip polygon ``poly[:n]`` (camera space) against plane . (x, y, z, 1) >= 0.

    Intersections are computed with the edge endpoints in a canonical
    (lexicographic) order so a shared edge yields bit-identical points in
    both adjacent triangles.
    """
    m = 0
    for i in range(n):
        j = (i + 1) % n
        da = plane[0] * poly[i, 0] + plane[1] * poly[i, 1] + plane[2] * poly[i, 2] + plane[3]
        db = plane[0] * poly[j, 0] + plane[1] * poly[j, 1] + plane[2] * poly[j, 2] + plane[3]
        if da >= 0.0:
            out[m, 0] = poly[i, 0]
            out[m, 1] = poly[i, 1]
            out[m, 2] = poly[i, 2]
            m += 1
        if (da >= 0.0) != (db >= 0.0):
            swap = False
            for k in range(3):
                if poly[i, k] != poly[j, k]:
                    swap = poly[i, k] > poly[j, k]
                    break
            if swap:
                p, q, dp, dq = j, i, db, da
            else:
                p, q, dp, dq = i, j, da, db
            t = dp / (dp - dq)
            for k in range(3):
                out[m, k] = poly[p, k] + t * (poly[q, k] - poly[p, k])
            m += 1
    return m


@numba.njit(cache=True, nogil=True, inline="always")
def _edge_span(w, step, lo, hi):
    """Narrow [lo, hi] to the offsets j with w + step * j >= 0 (integers)."""
    if step > 0:
        # j >= ceil(-w / step)
        j = -(w // step)
        if j > lo:
            lo = j
    elif step < 0:
        # j <= floor(w / -step)
        j = w // (-step)
        if j < hi:
            hi = j
    elif w < 0:
        hi = lo - 1
    return lo, hi


@numba.njit(cache=True, nogil=True)
def _raster_tri(X0, Y0, X1, Y1, X2, Y2, iz0, iz1, iz2, draw_index, far_inv,
                width, height, ids, izbuf):
    area = (X1 - X0) * (Y2 - Y0) - (Y1 - Y0) * (X2 - X0)
    if area == 0:
        return
    if area < 0:
        X1, Y1, X2, Y2 = X2, Y2, X1, Y1
        iz1, iz2 = iz2, iz1
        area = -area
    xmin = min(X0, X1, X2)
    xmax = max(X0, X1, X2)
    ymin = min(Y0, Y1, Y2)
    ymax = max(Y0, Y1, Y2)
    half = _SUB // 2
    c0 = max(0, -((half - xmin) // _SUB))  # ceil((xmin - half) / SUB)
    c1 = min(width - 1, (xmax - half) // _SUB)
    r0 = max(0, -((half - ymin) // _SUB))
    r1 = min(height - 1, (ymax - half) // _SUB)
    if c0 > c1 or r0 > r1:
        return

    # Edge k is opposite vertex k; w_k(p) = E(a_k, b_k, p).
    ax0, ay0, bx0, by0 = X1, Y1, X2, Y2
    ax1, ay1, bx1, by1 = X2, Y2, X0, Y0
    ax2, ay2, bx2, by2 = X0, Y0, X1, Y1
    dx0, dy0 = bx0 - ax0, by0 - ay0
    dx1, dy1 = bx1 - ax1, by1 - ay1
    dx2, dy2 = bx2 - ax2, by2 - ay2
    # Top-left rule: points exactly on an edge belong to it only if the edge
    # is a top edge (dy == 0, dx > 0) or a left edge (dy < 0).
    bias0 = 0 if (dy0 < 0 or (dy0 == 0 and dx0 > 0)) else 1
    bias1 = 0 if (dy1 < 0 or (dy1 == 0 and dx1 > 0)) else 1
    bias2 = 0 if (dy2 < 0 or (dy2 == 0 and dx2 > 0)) else 1

    px = c0 * _SUB + half
    py = r0 * _SUB + half
    row0 = dx0 * (py - ay0) - dy0 * (px - ax0)
    row1 = dx1 * (py - ay1) - dy1 * (px - ax1)
    row2 = dx2 * (py - ay2) - dy2 * (px - ax2)
    sx0, sx1, sx2 = -dy0 * _SUB, -dy1 * _SUB, -dy2 * _SUB
    sy0, sy1, sy2 = dx0 * _SUB, dx1 * _SUB, dx2 * _SUB
    inv_area = 1.0 / area
    ncols = c1 - c0
    for r in range(r0, r1 + 1):
        # Exact column span where all three w_k - bias_k >= 0, so the inner
        # loop only visits covered pixels.
        lo = 0
        hi = ncols
        lo, hi = _edge_span(row0 - bias0, sx0, lo, hi)
        lo, hi = _edge_span(row1 - bias1, sx1, lo, hi)
        lo, hi = _edge_span(row2 - bias2, sx2, lo, hi)
        if lo <= hi:
            w0 = row0 + sx0 * lo
            w1 = row1 + sx1 * lo
            w2 = row2 + sx2 * lo
            for c in range(c0 + lo, c0 + hi + 1):
                iz = (w0 * iz0 + w1 * iz1 + w2 * iz2) * inv_area
                if iz >= far_inv and (iz > izbuf[r, c] or (
                        iz == izbuf[r, c] and draw_index < ids[r, c])):
                    izbuf[r, c] = iz
                    ids[r, c] = draw_index
                w0 += sx0
                w1 += sx1
                w2 += sx2
        row0 += sy0
        row1 += sy1
        row2 += sy2


@numba.njit(cache=True, nogil=True)
def _raster_kernel(tris, active, pos, right, up, fwd, focal, width, height,
                   near, far, guard, ids, izbuf):
    cx = width * 0.5
    cy = height * 0.5
    gx = (cx + guard * width) / focal
    gy = (cy + guard * height) / focal
    planes = np.empty((5, 4))
    planes[0, 0], planes[0, 1], planes[0, 2], planes[0, 3] = 0.0, 0.0, 1.0, -near
    planes[1, 0], planes[1, 1], planes[1, 2], planes[1, 3] = -1.0, 0.0, gx, 0.0
    planes[2, 0], planes[2, 1], planes[2, 2], planes[2, 3] = 1.0, 0.0, gx, 0.0
    planes[3, 0], planes[3, 1], planes[3, 2], planes[3, 3] = 0.0, -1.0, gy, 0.0
    planes[4, 0], planes[4, 1], planes[4, 2], planes[4, 3] = 0.0, 1.0, gy, 0.0
    far_inv = 1.0 / far
    poly = np.empty((9, 3))
    tmp = np.empty((9, 3))
    fx = np.empty(9, dtype=np.int64)
    fy = np.empty(9, dtype=np.int64)
    fiz = np.empty(9)

    for a in range(active.shape[0]):
        t = active[a]
        zmin = 1e300
        zmax = -1e300
        for k in range(3):
            dx = tris[t, k, 0] - pos[0]
            dy = tris[t, k, 1] - pos[1]
            dz = tris[t, k, 2] - pos[2]
            poly[k, 0] = dx * right[0] + dy * right[1] + dz * right[2]
            poly[k, 1] = dx * up[0] + dy * up[1] + dz * up[2]
            poly[k, 2] = dx * fwd[0] + dy * fwd[1] + dz * fwd[2]
            zmin = min(zmin, poly[k, 2])
            zmax = max(zmax, poly[k, 2])
        if zmax < near or zmin > far:
            continue
        n = 3
        # Clip only against planes the triangle actually crosses.
        for p in range(5):
            inside = 0
            for k in range(n):
                d = (planes[p, 0] * poly[k, 0] + planes[p, 1] * poly[k, 1]
                     + planes[p, 2] * poly[k, 2] + planes[p, 3])
                if d >= 0.0:
                    inside += 1
            if inside == n:
                continue
            if inside == 0:
                n = 0
                break
            n = _clip_poly(poly, n, planes[p], tmp)
            for k in range(n):
                poly[k, 0] = tmp[k, 0]
                poly[k, 1] = tmp[k, 1]
                poly[k, 2] = tmp[k, 2]
        if n < 3:
            continue
        for k in range(n):
            z = poly[k, 2]
            sx = cx + focal * poly[k, 0] / z
            sy = cy - focal * poly[k, 1] / z
            fx[k] = np.int64(np.floor(sx * _SUB + 0.5))
            fy[k] = np.int64(np.floor(sy * _SUB + 0.5))
            fiz[k] = 1.0 / z
        for k in range(1, n - 1):
            _raster_tri(fx[0], fy[0], fx[k], fy[k], fx[k + 1], fy[k + 1],
                        fiz[0], fiz[k], fiz[k + 1], t, far_inv, width, height, ids, izbuf)


def render_ids(scene, cam: CameraPose) -> np.ndarray:
    """Per-pixel draw index of the visible triangle, or -1 for sky."""
    prep = prepare_scene(scene)
    p = cam.params
    ids = np.full((p.height, p.width), -1, dtype=np.int64)
    izbuf = np.zeros((p.height, p.width), dtype=np.float64)
    active = prep.active(cam.position).astype(np.int64)
    if len(active):
        _raster_kernel(prep.tris, active, np.asarray(cam.position, dtype=np.float64),
                       cam.right, cam.up, cam.forward, cam.focal_px, p.width, p.height,
                       p.near_m, p.far_m, GUARD_BAND, ids, izbuf)
    return ids


def ids_to_labels(prep: PreparedScene, ids) -> np.ndarray:
    labels = np.full(ids.shape, SKY, dtype=np.int8)
    hit = ids >= 0
    labels[hit] = prep.labels[ids[hit]]
    return labels


def render_view(scene, cam: CameraPose) -> ViewImage:
    """Render the colored scene from ``cam``; an empty scene is all sky."""
    prep = prepare_scene(scene)
    _bump("render_view")
    ids = render_ids(prep, cam)
    pixels = np.empty((*ids.shape, 3), dtype=np.uint8)
    _colorize(ids, prep.labels, PALETTE_ARRAY, SKY, pixels)
    return ViewImage(pixels)


@numba.njit(cache=True, nogil=True)
def _colorize(ids, tri_labels, palette, sky, out):
    for r in range(ids.shape[0]):
        for c in range(ids.shape[1]):
            i = ids[r, c]
            k = sky if i < 0 else tri_labels[i]
            out[r, c, 0] = palette[k, 0]
            out[r, c, 1] = palette[k, 1]
            out[r, c, 2] = palette[k, 2]


def triangle_coverage(screen_xy, width, height) -> np.ndarray:
    """Boolean mask of pixels one screen-space triangle owns.

    ``screen_xy`` is three (x, y) pixel-coordinate pairs (y down). Used to
    check the fill rule directly without a camera.
    """
    pts = np.asarray(screen_xy, dtype=np.float64).reshape(3, 2)
    f = np.floor(pts * _SUB + 0.5).astype(np.int64)
    ids = np.full((height, width), -1, dtype=np.int64)
    izbuf = np.zeros((height, width))
    _raster_tri(f[0, 0], f[0, 1], f[1, 0], f[1, 1], f[2, 0], f[2, 1],
                1.0, 1.0, 1.0, 0, 0.0, width, height, ids, izbuf)
    return ids == 0


# --------------------------------------------------------------------------
# PPM


def save_image(img: ViewImage, path):
    """Write a binary PPM (P6); raises OSError when the path is unwritable."""
    header = b"P6\n%d %d\n255\n" % (img.width, img.height)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(img.pixels, dtype=np.uint8).tobytes())


def load_image(path) -> ViewImage:
    with open(path, "rb") as f:
        data = f.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos)
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated PPM header")
        fields.append(data[start:pos])
    if fields[0] != b"P6" or fields[3] != b"255":
        raise ParseError("only 8-bit binary PPM (P6) is supported")
    w, h = int(fields[1]), int(fields[2])
    pos += 1
    body = data[pos:pos + w * h * 3]
    if len(body) != w * h * 3:
        raise ParseError("truncated PPM pixel data")
    return ViewImage(np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy())
