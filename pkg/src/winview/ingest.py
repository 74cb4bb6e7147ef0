"""Readers and writers for meshes, labeled point clouds, rasters and windows.

Formats:

* PLY (ascii, binary little/big endian) for meshes and point clouds, with an
  optional integer ``label`` vertex property.
* ESRI ASCII grid for DSM / NDVI rasters.
* CSV ``id,x,y,z,heading_deg`` for the window manifest.

Scene frame is x=east, y=north, z=up in meters; headings are degrees
clockwise from north.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError
from .labels import check_geometry_codes

log = logging.getLogger(__name__)

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


# --------------------------------------------------------------------------
# model types


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangle mesh. ``vertices`` is (N, 3) float64, ``triangles`` (M, 3) int64."""

    vertices: np.ndarray
    triangles: np.ndarray
    n_dropped: int = field(default=0, compare=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (np.array_equal(self.vertices, other.vertices)
                and np.array_equal(self.triangles, other.triangles))

    __hash__ = None


def validate_mesh(vertices, triangles) -> Mesh:
    """Check indices and coordinates, dropping zero-area triangles."""
    return _validate_mesh(vertices, triangles)[0]


def _validate_mesh(vertices, triangles):
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if not np.all(np.isfinite(vertices)):
        raise ValidationError("non-finite vertex coordinate")
    if triangles.size:
        lo, hi = int(triangles.min()), int(triangles.max())
        if lo < 0 or hi >= len(vertices):
            bad = lo if lo < 0 else hi
            raise ValidationError(
                f"triangle references vertex {bad} of {len(vertices)}")
    mesh = Mesh(vertices, triangles)
    keep = mesh.triangle_areas() > 0.0
    n_bad = int((~keep).sum())
    if n_bad:
        log.warning("dropped %d degenerate triangle(s)", n_bad)
        mesh = Mesh(vertices, triangles[keep], n_dropped=n_bad)
    return mesh, keep


@dataclass(frozen=True, eq=False)
class LabeledPointCloud:
    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        labels = check_geometry_codes(np.asarray(self.labels).reshape(-1))
        if len(labels) != len(pts):
            raise ValidationError("one label per point required")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("non-finite point coordinate")
        pts.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True, eq=False)
class GeoRaster:
    """Georeferenced grid; ``values[row, col]`` with row 0 the southernmost row."""

    ncols: int
    nrows: int
    origin_x: float
    origin_y: float
    cellsize: float
    nodata: float
    values: np.ndarray

    def __post_init__(self):
        if self.ncols <= 0 or self.nrows <= 0:
            raise ValidationError("raster dimensions must be positive")
        if not self.cellsize > 0:
            raise ValidationError(f"cellsize must be > 0, got {self.cellsize}")
        vals = np.array(self.values, dtype=np.float64)
        if vals.size != self.ncols * self.nrows:
            raise ValidationError(
                f"expected {self.ncols * self.nrows} values, got {vals.size}")
        vals = vals.reshape(self.nrows, self.ncols)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def value(self, col: int, row: int) -> float:
        return float(self.values[row, col])

    def is_nodata(self, col: int, row: int) -> bool:
        return bool(self.nodata_mask()[row, col])

    def nodata_mask(self) -> np.ndarray:
        mask = np.isnan(self.values)
        if not math.isnan(self.nodata):
            mask |= self.values == self.nodata
        return mask

    def cell_centers(self):
        """(x, y) arrays of shape (nrows, ncols) for every cell center."""
        xs = self.origin_x + (np.arange(self.ncols) + 0.5) * self.cellsize
        ys = self.origin_y + (np.arange(self.nrows) + 0.5) * self.cellsize
        return np.meshgrid(xs, ys)

    def same_grid(self, other) -> bool:
        return (self.ncols, self.nrows, self.origin_x, self.origin_y, self.cellsize) == (
            other.ncols, other.nrows, other.origin_x, other.origin_y, other.cellsize)

    def __eq__(self, other):
        if not isinstance(other, GeoRaster):
            return NotImplemented
        same_nodata = self.nodata == other.nodata or (
            math.isnan(self.nodata) and math.isnan(other.nodata))
        return (self.same_grid(other) and same_nodata
                and np.array_equal(self.values, other.values, equal_nan=True))

    __hash__ = None


@dataclass(frozen=True)
class WindowSpec:
    id: str
    position: tuple[float, float, float]
    heading_deg: float

    def __post_init__(self):
        if not self.id:
            raise ValidationError("window id must be non-empty")
        pos = tuple(float(c) for c in self.position)
        if len(pos) != 3 or not all(math.isfinite(c) for c in pos):
            raise ValidationError(f"window {self.id!r}: position must be 3 finite numbers")
        if not (math.isfinite(self.heading_deg) and 0.0 <= self.heading_deg < 360.0):
            raise ValidationError(
                f"window {self.id!r}: heading {self.heading_deg} outside [0, 360)")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "heading_deg", float(self.heading_deg))


# --------------------------------------------------------------------------
# PLY


@dataclass
class _PlyElement:
    name: str
    count: int
    props: list = field(default_factory=list)  # (name, dtype) or (name, (count_dt, item_dt))

    @property
    def has_list(self):
        return any(isinstance(dt, tuple) for _, dt in self.props)


def _ply_type(name):
    try:
        return _PLY_TYPES[name]
    except KeyError:
        raise ParseError(f"unknown PLY property type {name!r}") from None


def _read_ply_header(f):
    if f.readline().strip() != b"ply":
        raise ParseError("not a PLY file (missing magic)")
    fmt = None
    elements = []
    while True:
        raw = f.readline()
        if not raw:
            raise ParseError("unterminated PLY header")
        words = raw.decode("ascii", errors="replace").split()
        if not words or words[0] in ("comment", "obj_info"):
            continue
        key = words[0]
        if key == "end_header":
            break
        if key == "format":
            if len(words) < 2 or words[1] not in (
                    "ascii", "binary_little_endian", "binary_big_endian"):
                raise ParseError(f"unsupported PLY format line: {raw!r}")
            fmt = words[1]
        elif key == "element":
            try:
                elements.append(_PlyElement(words[1], int(words[2])))
            except (IndexError, ValueError):
                raise ParseError(f"bad element line: {raw!r}") from None
            if elements[-1].count < 0:
                raise ParseError("negative element count")
        elif key == "property":
            if not elements:
                raise ParseError("property before any element")
            if len(words) == 5 and words[1] == "list":
                dt = (_ply_type(words[2]), _ply_type(words[3]))
                elements[-1].props.append((words[4], dt))
            elif len(words) == 3:
                elements[-1].props.append((words[2], _ply_type(words[1])))
            else:
                raise ParseError(f"bad property line: {raw!r}")
        else:
            raise ParseError(f"unexpected PLY header line: {raw!r}")
    if fmt is None:
        raise ParseError("PLY header has no format line")
    return fmt, elements


def _read_binary_element(buf, pos, el, endian):
    if not el.has_list:
        dtype = np.dtype([(n, endian + dt) for n, dt in el.props])
        need = dtype.itemsize * el.count
        if pos + need > len(buf):
            raise ParseError(f"truncated PLY data in element {el.name!r}")
        data = np.frombuffer(buf, dtype=dtype, count=el.count, offset=pos)
        return {n: data[n] for n, _ in el.props}, pos + need
    # Fast path: every list property has a constant length of three.
    fields = []
    for n, dt in el.props:
        if isinstance(dt, tuple):
            fields += [(n + "#n", endian + dt[0]), (n, endian + dt[1], (3,))]
        else:
            fields.append((n, endian + dt))
    dtype = np.dtype(fields)
    need = dtype.itemsize * el.count
    if pos + need <= len(buf):
        data = np.frombuffer(buf, dtype=dtype, count=el.count, offset=pos)
        lists = [n for n, dt in el.props if isinstance(dt, tuple)]
        if all(np.all(data[n + "#n"] == 3) for n in lists):
            return {n: data[n] for n, _ in el.props}, pos + need
    out = {n: [] for n, _ in el.props}
    try:
        for _ in range(el.count):
            for n, dt in el.props:
                if isinstance(dt, tuple):
                    cdt, idt = np.dtype(endian + dt[0]), np.dtype(endian + dt[1])
                    k = int(np.frombuffer(buf, cdt, 1, pos)[0])
                    pos += cdt.itemsize
                    out[n].append(np.frombuffer(buf, idt, k, pos))
                    pos += idt.itemsize * k
                else:
                    d = np.dtype(endian + dt)
                    out[n].append(np.frombuffer(buf, d, 1, pos)[0])
                    pos += d.itemsize
    except ValueError:
        raise ParseError(f"truncated PLY data in element {el.name!r}") from None
    return out, pos


def _read_ascii_element(tokens, pos, el):
    def take(k):
        nonlocal pos
        if pos + k > len(tokens):
            raise ParseError(f"truncated PLY data in element {el.name!r}")
        chunk = tokens[pos:pos + k]
        pos += k
        return chunk

    try:
        if not el.has_list:
            n = len(el.props)
            flat = take(n * el.count)
            table = np.array(flat, dtype=np.float64).reshape(el.count, n) if n else None
            return {name: table[:, i].astype(dt) for i, (name, dt) in enumerate(el.props)}, pos
        # Fast path: every list property has a constant length of three.
        cols, col = {}, 0
        for name, dt in el.props:
            cols[name] = col
            col += 4 if isinstance(dt, tuple) else 1
        if pos + col * el.count <= len(tokens):
            table = np.array(tokens[pos:pos + col * el.count],
                             dtype=np.float64).reshape(-1, col)
            lists = [n for n, dt in el.props if isinstance(dt, tuple)]
            if all(np.all(table[:, cols[n]] == 3) for n in lists):
                pos += col * el.count
                return {n: (table[:, cols[n] + 1:cols[n] + 4].astype(dt[1])
                            if isinstance(dt, tuple) else table[:, cols[n]].astype(dt))
                        for n, dt in el.props}, pos
        out = {n: [] for n, _ in el.props}
        for _ in range(el.count):
            for name, dt in el.props:
                if isinstance(dt, tuple):
                    k = int(take(1)[0])
                    out[name].append(np.array(take(k), dtype=np.float64).astype(dt[1]))
                else:
                    out[name].append(np.dtype(dt).type(float(take(1)[0])))
        return out, pos
    except ValueError as exc:
        raise ParseError(f"bad number in element {el.name!r}: {exc}") from None


def read_ply(path) -> dict:
    """Parse a PLY file into ``{element: {property: values}}``."""
    with open(path, "rb") as f:
        fmt, elements = _read_ply_header(f)
        body = f.read()
    data = {}
    if fmt == "ascii":
        tokens = body.split()
        pos = 0
        for el in elements:
            data[el.name], pos = _read_ascii_element(tokens, pos, el)
    else:
        endian = "<" if fmt == "binary_little_endian" else ">"
        pos = 0
        for el in elements:
            data[el.name], pos = _read_binary_element(body, pos, el, endian)
    return data


def _vertex_xyz(data):
    vert = data.get("vertex")
    if vert is None:
        raise ParseError("PLY has no vertex element")
    try:
        cols = [np.asarray(vert[k], dtype=np.float64) for k in ("x", "y", "z")]
    except KeyError as exc:
        raise ParseError(f"vertex element lacks property {exc}") from None
    return np.stack(cols, axis=1) if len(cols[0]) else np.zeros((0, 3))


def _faces(data):
    """Triangles plus, for each, the index of the PLY face it came from."""
    face = data.get("face")
    if face is None:
        return np.zeros((0, 3), dtype=np.int64), np.zeros(0, dtype=np.int64)
    lists = face.get("vertex_indices", face.get("vertex_index"))
    if lists is None:
        raise ParseError("face element lacks vertex_indices")
    if isinstance(lists, np.ndarray) and lists.ndim == 2:
        return lists.astype(np.int64), np.arange(len(lists))
    tris, src = [], []
    for f, poly in enumerate(lists):
        poly = np.asarray(poly, dtype=np.int64)
        if len(poly) < 3:
            raise ValidationError(f"face with {len(poly)} vertices")
        # Fan-triangulate polygons.
        for k in range(1, len(poly) - 1):
            tris.append((poly[0], poly[k], poly[k + 1]))
            src.append(f)
    return np.array(tris, dtype=np.int64).reshape(-1, 3), np.array(src, dtype=np.int64)


def load_mesh(path):
    """Load a PLY mesh.

    Returns:
        ``(mesh, labels)`` where ``labels`` is an int8 code array aligned with
        the vertices, or ``None`` when the file has no ``label`` property.
    """
    mesh, labels, _ = load_mesh_labels(path)
    return mesh, labels


def load_mesh_labels(path):
    """Like :func:`load_mesh`, also returning per-triangle labels taken from a
    face ``label`` property (``None`` if absent).

    Polygons are fan-triangulated and each triangle inherits its face's label.
    """
    data = read_ply(path)
    vertices = _vertex_xyz(data)
    labels = data["vertex"].get("label")
    if labels is not None:
        labels = check_geometry_codes(np.asarray(labels, dtype=np.int64))
    tris, src = _faces(data)
    mesh, keep = _validate_mesh(vertices, tris)
    face_labels = data.get("face", {}).get("label")
    if face_labels is not None:
        face_labels = check_geometry_codes(np.asarray(face_labels, dtype=np.int64)[src][keep])
    return mesh, labels, face_labels


def load_point_cloud(path) -> LabeledPointCloud:
    data = read_ply(path)
    points = _vertex_xyz(data)
    labels = data["vertex"].get("label")
    if labels is None:
        raise ValidationError("point cloud has no 'label' vertex property")
    if len(points) == 0:
        raise ValidationError("point cloud is empty")
    return LabeledPointCloud(points, np.asarray(labels, dtype=np.int64))


def _write_ply(path, vertices, labels=None, triangles=None, binary=True, face_labels=None):
    vertices = np.asarray(vertices, dtype=np.float64)
    lines = ["ply", "format binary_little_endian 1.0" if binary else "format ascii 1.0",
             f"element vertex {len(vertices)}",
             "property double x", "property double y", "property double z"]
    if labels is not None:
        lines.append("property uchar label")
    if triangles is not None:
        lines += [f"element face {len(triangles)}", "property list uchar int vertex_indices"]
        if face_labels is not None:
            lines.append("property uchar label")
    lines.append("end_header")
    header = ("\n".join(lines) + "\n").encode("ascii")

    if binary:
        vdt = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
        if labels is not None:
            vdt.append(("label", "u1"))
        vrec = np.empty(len(vertices), dtype=vdt)
        vrec["x"], vrec["y"], vrec["z"] = vertices.T
        if labels is not None:
            vrec["label"] = labels
        chunks = [header, vrec.tobytes()]
        if triangles is not None:
            fdt = [("n", "u1"), ("v", "<i4", (3,))]
            if face_labels is not None:
                fdt.append(("label", "u1"))
            frec = np.empty(len(triangles), dtype=fdt)
            frec["n"] = 3
            frec["v"] = triangles
            if face_labels is not None:
                frec["label"] = face_labels
            chunks.append(frec.tobytes())
        payload = b"".join(chunks)
    else:
        out = io.StringIO()
        for i, (x, y, z) in enumerate(vertices):
            row = f"{float(x)!r} {float(y)!r} {float(z)!r}"
            if labels is not None:
                row += f" {int(labels[i])}"
            out.write(row + "\n")
        if triangles is not None:
            for i, (a, b, c) in enumerate(triangles):
                tail = "" if face_labels is None else f" {int(face_labels[i])}"
                out.write(f"3 {a} {b} {c}{tail}\n")
        payload = header + out.getvalue().encode("ascii")
    with open(path, "wb") as f:
        f.write(payload)


def save_mesh(path, mesh: Mesh, labels=None, binary=True, face_labels=None):
    _write_ply(path, mesh.vertices, labels, mesh.triangles, binary=binary,
               face_labels=face_labels)


def save_point_cloud(path, cloud: LabeledPointCloud, binary=True):
    _write_ply(path, cloud.points, cloud.labels, binary=binary)


# --------------------------------------------------------------------------
# ESRI ASCII grid

_ASC_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def load_raster(path) -> GeoRaster:
    """Read an ESRI ASCII grid. File rows run north to south; storage is flipped."""
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    tokens = text.split()
    header = {}
    pos = 0
    while pos + 1 < len(tokens) and tokens[pos][0].isalpha():
        key = tokens[pos].lower()
        if key in ("xllcenter", "yllcenter"):
            header[key] = tokens[pos + 1]
        elif key in _ASC_KEYS:
            header[key] = tokens[pos + 1]
        else:
            raise ParseError(f"unknown header key {tokens[pos]!r}")
        pos += 2
    try:
        ncols = int(header["ncols"])
        nrows = int(header["nrows"])
        cellsize = float(header["cellsize"])
        nodata = float(header["nodata_value"])
        if "xllcenter" in header:
            x0 = float(header["xllcenter"]) - cellsize / 2
        else:
            x0 = float(header["xllcorner"])
        if "yllcenter" in header:
            y0 = float(header["yllcenter"]) - cellsize / 2
        else:
            y0 = float(header["yllcorner"])
    except KeyError as exc:
        raise ParseError(f"missing header key {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ParseError(f"bad header value: {exc}") from None
    body = tokens[pos:]
    if len(body) != ncols * nrows:
        raise ParseError(f"expected {ncols * nrows} values for {ncols}x{nrows}, got {len(body)}")
    try:
        values = np.array(body, dtype=np.float64).reshape(nrows, ncols)
    except ValueError as exc:
        raise ParseError(f"bad raster value: {exc}") from None
    try:
        return GeoRaster(ncols, nrows, x0, y0, cellsize, nodata, values[::-1])
    except ValidationError as exc:
        raise ParseError(str(exc)) from None


def _fmt_num(v):
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def save_raster(path, raster: GeoRaster):
    lines = [
        f"ncols {raster.ncols}",
        f"nrows {raster.nrows}",
        f"xllcorner {_fmt_num(raster.origin_x)}",
        f"yllcorner {_fmt_num(raster.origin_y)}",
        f"cellsize {_fmt_num(raster.cellsize)}",
        f"NODATA_value {_fmt_num(raster.nodata)}",
    ]
    for row in raster.values[::-1]:
        lines.append(" ".join(_fmt_num(v) for v in row))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# window manifest

WINDOW_FIELDS = ("id", "x", "y", "z", "heading_deg")


def load_windows(path) -> list[WindowSpec]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty window manifest") from None
        if tuple(header) != WINDOW_FIELDS:
            raise ParseError(f"{path}: header must be {','.join(WINDOW_FIELDS)}, got {','.join(header)}")
        windows, seen = [], set()
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(WINDOW_FIELDS):
                raise ParseError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            wid = row[0].strip()
            try:
                x, y, z, heading = (float(c) for c in row[1:])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if wid in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate window id {wid!r}")
            seen.add(wid)
            windows.append(WindowSpec(wid, (x, y, z), heading))
    return windows


def save_windows(path, windows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(WINDOW_FIELDS)
        for win in windows:
            w.writerow([win.id, *(repr(c) for c in win.position), repr(win.heading_deg)])

