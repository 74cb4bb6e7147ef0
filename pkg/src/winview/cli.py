"""Command-line entry point: ``winview <subcommand>``.

Subcommands follow the two-step workflow: scene preparation
(``segment-ndvi``, ``build-scene``) is separate from assessment
(``assess``, ``bench``). ``fixtures`` writes the synthetic test scenes.

Settings can come from an INI file (``--config``, one ``[winview]``
section with the keys of :class:`RunConfig`); command-line flags win.

Exit codes: 0 success, 1 validation or parse error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, fields

from . import distant, ingest, oracle, render, transfer, wvi
from .errors import ParseError, ValidationError, WinviewError

log = logging.getLogger("winview")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2


class ConfigError(ValidationError):
    pass


@dataclass
class RunConfig:
    # inputs
    mesh: str | None = None
    cloud: str | None = None
    label_source_mesh: str | None = None
    dsm: str | None = None
    ndvi: str | None = None
    windows: str | None = None
    near_mesh: str | None = None
    far_mesh: str | None = None
    # NDVI thresholds
    greenery_min: float = 0.1
    construction_min: float = 0.0
    # camera
    fov_deg: float = 60.0
    width: int = 900
    height: int = 900
    near_m: float = 0.1
    far_m: float = 20_000.0
    cutoff_m: float = 2000.0
    # sampling
    density: float = 100.0
    seed: int = 0
    # execution / outputs
    workers: int = 1
    out: str | None = None
    out_dir: str | None = None
    timing_json: str | None = None
    dump_images: str | None = None
    keep_going: bool = False
    use_oracle: bool = False
    fixture: str | None = None
    n_windows: int = 100

    def thresholds(self) -> distant.NdviThresholds:
        return distant.NdviThresholds(self.greenery_min, self.construction_min)

    def camera(self) -> render.CameraParams:
        return render.CameraParams(self.fov_deg, self.width, self.height, self.near_m, self.far_m)

    def validate(self, inputs=(), outputs=(), optional_inputs=()):
        """Check numeric invariants, then that required settings are present and
        that every named input file exists."""
        try:
            self.thresholds()
            self.camera()
        except ValidationError as exc:
            raise ConfigError(str(exc)) from None
        if not self.cutoff_m > 0:
            raise ConfigError(f"cutoff_m must be > 0, got {self.cutoff_m}")
        if not self.density > 0:
            raise ConfigError(f"density must be > 0, got {self.density}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        for key in (*inputs, *outputs):
            if getattr(self, key) is None:
                raise ConfigError(f"missing required setting '{key}'")
        for key in (*inputs, *optional_inputs):
            path = getattr(self, key)
            if path is not None and not os.path.exists(path):
                raise ConfigError(f"{key} not found: {path}")
        return self


def _coerce(field_type, raw):
    kind = field_type if isinstance(field_type, str) else field_type.__name__
    if kind.startswith("bool"):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if kind.startswith("int"):
        return int(raw)
    if kind.startswith("float"):
        return float(raw)
    return raw


def load_config(path) -> dict:
    parser = configparser.ConfigParser()
    if not parser.read(path, encoding="utf-8"):
        raise ConfigError(f"config file not found: {path}")
    if not parser.has_section("winview"):
        raise ConfigError(f"{path}: missing [winview] section")
    types = {f.name: f.type for f in fields(RunConfig)}
    out = {}
    for key, raw in parser.items("winview"):
        if key not in types:
            raise ConfigError(f"{path}: unknown key {key!r}")
        try:
            out[key] = _coerce(types[key], raw)
        except ValueError:
            raise ConfigError(f"{path}: bad value for {key}: {raw!r}") from None
    return out


def build_config(args) -> RunConfig:
    values = load_config(args.config) if getattr(args, "config", None) else {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig(**values)


# --------------------------------------------------------------------------
# commands


def cmd_segment_ndvi(cfg: RunConfig):
    cfg.validate(inputs=("ndvi",), outputs=("out",), optional_inputs=("dsm",))
    ndvi = ingest.load_raster(cfg.ndvi)
    labels = distant.segment_ndvi(ndvi, cfg.thresholds())
    if cfg.dsm:
        labels = distant.register_labels(labels, ingest.load_raster(cfg.dsm))
    distant.save_label_raster(cfg.out, labels)
    print(f"wrote {cfg.out} ({labels.grid.ncols}x{labels.grid.nrows})")


def cmd_build_scene(cfg: RunConfig):
    cfg.validate(inputs=("mesh",), outputs=("out_dir",),
                 optional_inputs=("cloud", "label_source_mesh", "dsm", "ndvi"))
    if (cfg.dsm is None) != (cfg.ndvi is None):
        raise ConfigError("dsm and ndvi must be given together")
    mesh, labels, face_labels = ingest.load_mesh_labels(cfg.mesh)
    if labels is not None and face_labels is not None:
        near = transfer.LabeledMesh(mesh, labels, face_labels)
    elif labels is not None:
        near = transfer.LabeledMesh.from_vertex_labels(mesh, labels)
    else:
        if cfg.cloud:
            cloud = ingest.load_point_cloud(cfg.cloud)
        elif cfg.label_source_mesh:
            src = transfer.load_labeled_mesh(cfg.label_source_mesh)
            cloud = transfer.cloud_from_labeled_mesh(src, cfg.density, cfg.seed)
        else:
            raise ConfigError("label source required: mesh has no labels; give --cloud "
                              "or --label-source-mesh")
        near = transfer.transfer_labels(mesh, cloud, workers=cfg.workers)
    os.makedirs(cfg.out_dir, exist_ok=True)
    near_path = os.path.join(cfg.out_dir, "near.ply")
    transfer.save_labeled_mesh(near_path, near)
    print(f"wrote {near_path} ({near.mesh.n_triangles} triangles)")
    if cfg.dsm:
        dsm = ingest.load_raster(cfg.dsm)
        labels = distant.register_labels(
            distant.segment_ndvi(ingest.load_raster(cfg.ndvi), cfg.thresholds()), dsm)
        far = distant.dsm_to_labeled_mesh(dsm, labels)
        far_path = os.path.join(cfg.out_dir, "far.ply")
        transfer.save_labeled_mesh(far_path, far)
        print(f"wrote {far_path} ({far.mesh.n_triangles} triangles)")


def _load_scene(cfg: RunConfig) -> render.ColoredScene:
    near = transfer.load_labeled_mesh(cfg.near_mesh)
    far = transfer.load_labeled_mesh(cfg.far_mesh) if cfg.far_mesh else transfer.LabeledMesh.empty()
    return render.ColoredScene(near, far, cfg.cutoff_m)


def _oracle_rmse(prep, windows, params, records):
    oracle_records = [
        wvi.compute_wvi(oracle.raycast_view(prep, render.place_camera(w, params)), w.id)
        for w in windows]
    ok_ids = {r.window_id for r in records}
    return wvi.rmse_compare(records, [r for r in oracle_records if r.window_id in ok_ids])


def cmd_assess(cfg: RunConfig):
    cfg.validate(inputs=("near_mesh", "windows"), outputs=("out",),
                 optional_inputs=("far_mesh",))
    scene = _load_scene(cfg)
    windows = ingest.load_windows(cfg.windows)
    params = cfg.camera()
    t0 = time.perf_counter()
    prep = render.prepare_scene(scene)
    prepare_s = time.perf_counter() - t0
    report = wvi.assess_batch(prep, windows, params, workers=cfg.workers,
                              keep_going=cfg.keep_going, dump_dir=cfg.dump_images)
    report.timing.prepare_s = prepare_s
    wvi.write_csv(report.records, cfg.out)
    if report.failures:
        fail_path = cfg.out + ".failures.csv"
        wvi.write_failures(report.failures, fail_path)
        print(f"{len(report.failures)} window(s) failed; see {fail_path}", file=sys.stderr)
    summary = report.timing.as_dict()
    if cfg.use_oracle and report.records:
        rmse = _oracle_rmse(prep, windows, params, report.records)
        summary["oracle_rmse"] = rmse
        print(wvi.format_rmse(rmse))
    print(report.timing.as_text())
    timing_json = cfg.timing_json or os.path.splitext(cfg.out)[0] + ".timing.json"
    with open(timing_json, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"wrote {cfg.out} ({len(report.records)} windows)")


def cmd_bench(cfg: RunConfig):
    cfg.validate(optional_inputs=("near_mesh", "far_mesh", "windows"))
    t0 = time.perf_counter()
    if cfg.near_mesh:
        if not cfg.windows:
            raise ConfigError("bench on a built scene needs --windows")
        scene = _load_scene(cfg)
        windows = ingest.load_windows(cfg.windows)
    else:
        scene, windows = oracle.synthetic_city(seed=cfg.seed, n_blocks=12, subdiv=8,
                                               n_windows=cfg.n_windows, cutoff_m=cfg.cutoff_m)
    windows = windows[:cfg.n_windows]
    load_s = time.perf_counter() - t0
    render.reset_stats()
    report = wvi.assess_batch(scene, windows, cfg.camera(), workers=cfg.workers)
    t = report.timing
    n_tris = scene.near_mesh.mesh.n_triangles + scene.far_mesh.mesh.n_triangles
    rows = [
        ("triangles", f"{n_tris}"),
        ("windows", f"{t.n_windows}"),
        ("workers", f"{t.workers}"),
        ("scene load/build (s, once)", f"{load_s:.4f}"),
        ("scene preparation (s, once)", f"{t.prepare_s:.4f}"),
        ("scene preparations run", f"{render.STATS['prepare_scene']}"),
        ("  amortized per window (s)", f"{(load_s + t.prepare_s) / max(t.n_windows, 1):.6f}"),
        ("1 window view generation (s, mean)", f"{t.render_mean_s:.6f}"),
        ("2 quantification of WVIs (s, mean)", f"{t.count_mean_s:.6f}"),
        ("total per window (s, mean)", f"{t.render_mean_s + t.count_mean_s:.6f}"),
        ("wall time (s)", f"{t.wall_s:.4f}"),
    ]
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k:<{width}}  {v}")
    if cfg.timing_json:
        d = t.as_dict()
        d.update(load_s=load_s, triangles=n_tris, prepare_calls=render.STATS["prepare_scene"])
        with open(cfg.timing_json, "w", encoding="utf-8") as f:
            json.dump(d, f, indent=2, sort_keys=True)
            f.write("\n")


def write_fixture(fx: oracle.Fixture, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    transfer.save_labeled_mesh(os.path.join(out_dir, "near.ply"), fx.scene.near_mesh)
    transfer.save_labeled_mesh(os.path.join(out_dir, "far.ply"), fx.scene.far_mesh)
    ingest.save_windows(os.path.join(out_dir, "windows.csv"), fx.windows)
    meta = {"name": fx.name, "cutoff_m": fx.scene.cutoff_m,
            "camera": dataclasses.asdict(fx.params),
            "expected": list(fx.expected) if fx.expected else None,
            "tolerance": fx.tolerance}
    with open(os.path.join(out_dir, "fixture.json"), "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2)
        f.write("\n")


def cmd_fixtures(cfg: RunConfig):
    cfg.validate(outputs=("out_dir",))
    names = oracle.FIXTURES if cfg.fixture in (None, "all") else (cfg.fixture,)
    for name in names:
        kwargs = {"seed": cfg.seed, "n_windows": cfg.n_windows} if name == "synthetic-city" else {}
        fx = oracle.make_fixture(name, cfg.camera(), **kwargs)
        path = os.path.join(cfg.out_dir, name)
        write_fixture(fx, path)
        print(f"wrote {path}")


COMMANDS = {
    "segment-ndvi": cmd_segment_ndvi,
    "build-scene": cmd_build_scene,
    "assess": cmd_assess,
    "bench": cmd_bench,
    "fixtures": cmd_fixtures,
}


def _add_common(p):
    p.add_argument("--config", help="INI file with a [winview] section")
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_camera(p):
    g = p.add_argument_group("camera")
    g.add_argument("--fov-deg", dest="fov_deg", type=float)
    g.add_argument("--width", type=int)
    g.add_argument("--height", type=int)
    g.add_argument("--near-m", dest="near_m", type=float)
    g.add_argument("--far-m", dest="far_m", type=float)
    g.add_argument("--cutoff-m", dest="cutoff_m", type=float)


def _add_thresholds(p):
    p.add_argument("--greenery-min", dest="greenery_min", type=float)
    p.add_argument("--construction-min", dest="construction_min", type=float)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="winview", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment-ndvi", help="classify an NDVI raster into label codes")
    _add_common(p)
    _add_thresholds(p)
    p.add_argument("--ndvi")
    p.add_argument("--dsm", help="register the labels onto this grid")
    p.add_argument("--out", help="output ESRI ASCII grid of label codes")

    p = sub.add_parser("build-scene", help="label the city mesh and mesh the DSM")
    _add_common(p)
    _add_thresholds(p)
    p.add_argument("--mesh")
    p.add_argument("--cloud", help="labeled point cloud (PLY)")
    p.add_argument("--label-source-mesh", dest="label_source_mesh",
                   help="labeled mesh to sample a cloud from")
    p.add_argument("--density", type=float, help="samples per m^2 (default 100)")
    p.add_argument("--dsm")
    p.add_argument("--ndvi")
    p.add_argument("--out-dir", dest="out_dir")

    p = sub.add_parser("assess", help="render every window and write WVIs")
    _add_common(p)
    _add_camera(p)
    p.add_argument("--near-mesh", dest="near_mesh")
    p.add_argument("--far-mesh", dest="far_mesh")
    p.add_argument("--windows")
    p.add_argument("--out", help="results CSV")
    p.add_argument("--timing-json", dest="timing_json")
    p.add_argument("--dump-images", dest="dump_images", metavar="DIR")
    p.add_argument("--keep-going", dest="keep_going", action="store_true", default=None)
    p.add_argument("--use-oracle", dest="use_oracle", action="store_true", default=None)

    p = sub.add_parser("bench", help="time view generation vs. WVI quantification")
    _add_common(p)
    _add_camera(p)
    p.add_argument("--near-mesh", dest="near_mesh")
    p.add_argument("--far-mesh", dest="far_mesh")
    p.add_argument("--windows")
    p.add_argument("--n-windows", dest="n_windows", type=int)
    p.add_argument("--timing-json", dest="timing_json")

    p = sub.add_parser("fixtures", help="write the synthetic fixture scenes")
    _add_common(p)
    _add_camera(p)
    p.add_argument("--name", dest="fixture", help="fixture name or 'all'")
    p.add_argument("--n-windows", dest="n_windows", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        COMMANDS[args.command](cfg)
    except (ParseError, ValidationError) as exc:
        print(f"winview {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (WinviewError, OSError) as exc:
        print(f"winview {args.command}: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
