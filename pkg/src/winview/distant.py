"""Far-field layer: NDVI classification, grid registration and DSM meshing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, ValidationError
from .ingest import GeoRaster, Mesh, save_raster
from .labels import SemanticLabel, check_geometry_codes
from .transfer import LabeledMesh

G = int(SemanticLabel.GREENERY)
W = int(SemanticLabel.WATERBODY)
C = int(SemanticLabel.CONSTRUCTION)

LABEL_NODATA = -1


@dataclass(frozen=True)
class NdviThresholds:
    """NDVI cut points: greenery above ``greenery_min``, construction from
    ``construction_min`` up to it, waterbody below."""

    greenery_min: float = 0.1
    construction_min: float = 0.0

    def __post_init__(self):
        if not self.greenery_min >= self.construction_min:
            raise ValidationError(
                f"greenery_min ({self.greenery_min}) must be >= "
                f"construction_min ({self.construction_min})")


@dataclass(frozen=True, eq=False)
class LabelRaster:
    """Per-cell label codes on a raster grid; row 0 is the southernmost row."""

    grid: GeoRaster
    labels: np.ndarray

    def __post_init__(self):
        labels = check_geometry_codes(np.asarray(self.labels))
        if labels.shape != (self.grid.nrows, self.grid.ncols):
            raise DimensionMismatchError(
                f"labels shape {labels.shape} does not match grid "
                f"{self.grid.nrows}x{self.grid.ncols}")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def label(self, col, row) -> SemanticLabel:
        return SemanticLabel(int(self.labels[row, col]))

    def __eq__(self, other):
        if not isinstance(other, LabelRaster):
            return NotImplemented
        return self.grid.same_grid(other.grid) and np.array_equal(self.labels, other.labels)

    __hash__ = None


def classify_ndvi(values, nodata_mask, t: NdviThresholds = NdviThresholds()) -> np.ndarray:
    """Vectorised NDVI rule on raw arrays.

    no-data -> waterbody; > greenery_min -> greenery;
    [construction_min, greenery_min] -> construction; below -> waterbody.
    """
    values = np.asarray(values, dtype=np.float64)
    out = np.full(values.shape, W, dtype=np.int8)
    valid = ~np.asarray(nodata_mask, dtype=bool) & ~np.isnan(values)
    out[valid & (values >= t.construction_min)] = C
    out[valid & (values > t.greenery_min)] = G
    return out


def segment_ndvi(ndvi: GeoRaster, t: NdviThresholds = NdviThresholds()) -> LabelRaster:
    return LabelRaster(ndvi, classify_ndvi(ndvi.values, ndvi.nodata_mask(), t))


def register_labels(labels: LabelRaster, target: GeoRaster) -> LabelRaster:
    """Nearest-neighbor resample ``labels`` onto ``target``'s grid.

    A target cell takes the label of the source cell containing its center;
    centers outside the source extent become waterbody.
    """
    src = labels.grid
    xs, ys = target.cell_centers()
    col = np.floor((xs - src.origin_x) / src.cellsize).astype(np.int64)
    row = np.floor((ys - src.origin_y) / src.cellsize).astype(np.int64)
    inside = (col >= 0) & (col < src.ncols) & (row >= 0) & (row < src.nrows)
    out = np.full((target.nrows, target.ncols), W, dtype=np.int8)
    out[inside] = labels.labels[row[inside], col[inside]]
    return LabelRaster(target, out)


def dsm_to_labeled_mesh(dsm: GeoRaster, labels: LabelRaster) -> LabeledMesh:
    """Mesh a DSM into a labeled heightfield.

    Vertices sit at cell centers at the cell's height; cells with no-data
    height produce no vertex. Each quad of four valid nodes, indexed by its
    lower-left node (col, row), is split along the lower-left to upper-right
    diagonal and both halves carry the label of cell (col, row).
    """
    if not labels.grid.same_grid(dsm):
        raise DimensionMismatchError("label raster is not registered on the DSM grid")
    valid = ~dsm.nodata_mask()
    index = np.full(valid.shape, -1, dtype=np.int64)
    index[valid] = np.arange(int(valid.sum()))

    xs, ys = dsm.cell_centers()
    vertices = np.stack([xs[valid], ys[valid], dsm.values[valid]], axis=1)

    ll = index[:-1, :-1]
    lr = index[:-1, 1:]
    ul = index[1:, :-1]
    ur = index[1:, 1:]
    full = (ll >= 0) & (lr >= 0) & (ul >= 0) & (ur >= 0)
    quad_labels = labels.labels[:-1, :-1][full]
    a, b, c, d = ll[full], lr[full], ur[full], ul[full]
    # Interleave so a quad's two triangles are adjacent in draw order.
    tris = np.empty((2 * len(a), 3), dtype=np.int64)
    tris[0::2] = np.stack([a, b, c], axis=1)
    tris[1::2] = np.stack([a, c, d], axis=1)
    tri_labels = np.repeat(quad_labels, 2)

    # Vertex labels only matter for export; use the vertex's own cell.
    vertex_labels = labels.labels[valid]
    return LabeledMesh(Mesh(vertices, tris), vertex_labels, tri_labels)


def save_label_raster(path, labels: LabelRaster):
    grid = labels.grid
    save_raster(path, GeoRaster(grid.ncols, grid.nrows, grid.origin_x, grid.origin_y,
                                grid.cellsize, LABEL_NODATA, labels.labels.astype(np.float64)))
