"""WVI quantification, batch assessment and result comparison."""

from __future__ import annotations

import csv
import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import IdMismatchError, ParseError, UnknownColorError, WindowError
from .labels import LABELS, PALETTE_ARRAY, WviRecord
from .render import CameraParams, ViewImage, place_camera, prepare_scene, render_view, save_image

log = logging.getLogger(__name__)

CSV_FIELDS = ("id", "wvi_greenery", "wvi_waterbody", "wvi_sky", "wvi_construction")
LABEL_NAMES = tuple(l.name.lower() for l in LABELS)

_PACKED_PALETTE = [(int(r) << 16) | (int(g) << 8) | int(b) for r, g, b in PALETTE_ARRAY]


def count_labels(img: ViewImage) -> tuple[int, int, int, int]:
    """Exact pixel count per label, in label order.

    Raises:
        UnknownColorError: some pixel is not a palette color.
    """
    px = img.pixels
    if px.size == 0:
        raise ValueError("empty image")
    packed = ((px[..., 0].astype(np.uint32) << 16)
              | (px[..., 1].astype(np.uint32) << 8)
              | px[..., 2].astype(np.uint32))
    counts = tuple(int(np.count_nonzero(packed == v)) for v in _PACKED_PALETTE)
    n = packed.size
    if sum(counts) != n:
        bad = ~np.isin(packed, _PACKED_PALETTE)
        first = px.reshape(-1, 3)[np.flatnonzero(bad.reshape(-1))[0]]
        raise UnknownColorError(first, n - sum(counts))
    return counts


def compute_wvi(img: ViewImage, window_id: str = "") -> WviRecord:
    """Fraction of pixels per label: greenery, waterbody, sky, construction."""
    return WviRecord.from_counts(window_id, count_labels(img))


@dataclass
class StepTiming:
    """Totals mirror the two-step split: view generation vs. WVI quantification."""

    n_windows: int = 0
    prepare_s: float = 0.0
    render_s: float = 0.0
    count_s: float = 0.0
    wall_s: float = 0.0
    workers: int = 1

    @property
    def render_mean_s(self) -> float:
        return self.render_s / self.n_windows if self.n_windows else 0.0

    @property
    def count_mean_s(self) -> float:
        return self.count_s / self.n_windows if self.n_windows else 0.0

    @property
    def prepare_per_window_s(self) -> float:
        return self.prepare_s / self.n_windows if self.n_windows else 0.0

    def as_dict(self) -> dict:
        d = asdict(self)
        d.update(render_mean_s=self.render_mean_s, count_mean_s=self.count_mean_s,
                 prepare_per_window_s=self.prepare_per_window_s)
        return d

    def as_text(self) -> str:
        return "\n".join(f"{k} = {v:.6f}" if isinstance(v, float) else f"{k} = {v}"
                         for k, v in self.as_dict().items())


@dataclass
class AssessmentReport:
    records: list[WviRecord] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)
    timing: StepTiming = field(default_factory=StepTiming)


def _image_name(window_id):
    return re.sub(r"[^A-Za-z0-9._-]", "_", window_id) + ".ppm"


def assess_batch(scene, windows, params: CameraParams | None = None, workers=1,
                 keep_going=False, dump_dir=None) -> AssessmentReport:
    """Render and quantify every window.

    The scene is prepared once and shared read-only across worker threads.
    Records come back in manifest order whatever the execution order.

    Args:
        keep_going: Record per-window failures in ``report.failures`` and
            continue, instead of raising :class:`WindowError` on the first.
        dump_dir: If set, each view is written there as ``<id>.ppm``.
    """
    params = params or CameraParams()
    windows = list(windows)
    timing = StepTiming(n_windows=len(windows), workers=workers)
    report = AssessmentReport(timing=timing)
    if not windows:
        return report
    wall0 = time.perf_counter()
    t0 = time.perf_counter()
    prep = prepare_scene(scene)
    timing.prepare_s = time.perf_counter() - t0 if prep is not scene else 0.0
    if dump_dir is not None:
        os.makedirs(dump_dir, exist_ok=True)

    def one(window):
        try:
            t0 = time.perf_counter()
            img = render_view(prep, place_camera(window, params))
            t1 = time.perf_counter()
            rec = compute_wvi(img, window.id)
            t2 = time.perf_counter()
            if dump_dir is not None:
                save_image(img, os.path.join(dump_dir, _image_name(window.id)))
            return rec, t1 - t0, t2 - t1, None
        except Exception as exc:  # noqa: BLE001 - attached to the window id below
            return None, 0.0, 0.0, exc

    if workers <= 1:
        results = [one(w) for w in windows]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, windows))

    for window, (rec, rs, cs, exc) in zip(windows, results):
        timing.render_s += rs
        timing.count_s += cs
        if exc is not None:
            if not keep_going:
                raise WindowError(window.id, exc) from exc
            log.warning("window %s failed: %s", window.id, exc)
            report.failures.append((window.id, str(exc)))
        else:
            report.records.append(rec)
    timing.wall_s = time.perf_counter() - wall0
    return report


def write_csv(records, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for rec in records:
            w.writerow([rec.window_id, *(f"{v:.6f}" for v in rec.values())])


def read_csv(path) -> list[WviRecord]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_FIELDS:
            raise ParseError(f"{path}: unexpected header {header}")
        out = []
        for row in reader:
            if not row:
                continue
            try:
                out.append(WviRecord(row[0], *(float(v) for v in row[1:5])))
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{path}: bad row {row}: {exc}") from None
    return out


def write_failures(failures, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("id", "error"))
        w.writerows(failures)


def write_timing(timing: StepTiming, json_path=None, text_path=None):
    if json_path:
        with open(json_path, "w", encoding="utf-8") as f:
            json.dump(timing.as_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
    if text_path:
        with open(text_path, "w", encoding="utf-8") as f:
            f.write(timing.as_text() + "\n")


def rmse_compare(a, b) -> dict[str, float]:
    """Per-label RMSE between two result sets paired by window id, plus the mean.

    >>> ra = [WviRecord("w", 0.5, 0.0, 0.5, 0.0)]
    >>> rb = [WviRecord("w", 0.4, 0.0, 0.6, 0.0)]
    >>> round(rmse_compare(ra, rb)["greenery"], 12)
    0.1
    """
    da = {r.window_id: r for r in a}
    db = {r.window_id: r for r in b}
    if len(da) != len(a) or len(db) != len(b):
        raise IdMismatchError("duplicate window id in a result set")
    if da.keys() != db.keys():
        missing = sorted(da.keys() ^ db.keys())
        raise IdMismatchError(f"window ids differ: {missing[:5]}")
    if not da:
        raise IdMismatchError("no windows to compare")
    ids = sorted(da)
    va = np.array([da[i].values() for i in ids])
    vb = np.array([db[i].values() for i in ids])
    per_label = np.sqrt(np.mean((va - vb) ** 2, axis=0))
    out = {name: float(v) for name, v in zip(LABEL_NAMES, per_label)}
    out["average"] = float(np.mean(per_label))
    return out


def format_rmse(rmse: dict) -> str:
    return "\n".join(f"rmse_{k} = {v:.6f}" for k, v in rmse.items())

