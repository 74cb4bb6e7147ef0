import json
import os

import numpy as np
import pytest

from helpers import write_asc, write_ascii_ply
from winview import cli
from winview.ingest import WindowSpec, load_raster, load_windows, save_windows
from winview.transfer import load_labeled_mesh
from winview.wvi import read_csv

G, W, C = 0, 1, 3


def run(*argv):
    return cli.main([str(a) for a in argv])


# --------------------------------------------------------------------------
# segment-ndvi


@pytest.fixture
def ndvi_inputs(tmp_path):
    ndvi = write_asc(tmp_path / "ndvi.asc", 2, 2, [[0.2, -0.3], [0.05, -9999]], cellsize=30)
    dsm = write_asc(tmp_path / "dsm.asc", 6, 6, [[5] * 6] * 6, cellsize=10)
    return ndvi, dsm


def test_segment_ndvi(tmp_path, ndvi_inputs, capsys):
    ndvi, dsm = ndvi_inputs
    assert run("segment-ndvi", "--ndvi", ndvi, "--out", tmp_path / "l.asc") == 0
    out = load_raster(tmp_path / "l.asc")
    # Internal rows run south to north.
    assert out.values.tolist() == [[C, W], [G, W]]
    assert run("segment-ndvi", "--ndvi", ndvi, "--dsm", dsm, "--out", tmp_path / "r.asc") == 0
    reg = load_raster(tmp_path / "r.asc")
    assert (reg.ncols, reg.nrows, reg.cellsize) == (6, 6, 10)
    assert reg.values[0, 0] == C and reg.values[5, 0] == G and reg.values[5, 5] == W
    assert "wrote" in capsys.readouterr().out


def test_segment_ndvi_missing_path(tmp_path, capsys):
    missing = tmp_path / "nope.asc"
    assert run("segment-ndvi", "--ndvi", missing, "--out", tmp_path / "l.asc") == 1
    assert str(missing) in capsys.readouterr().err


def test_segment_ndvi_bad_thresholds(tmp_path, ndvi_inputs, capsys):
    ndvi, _ = ndvi_inputs
    code = run("segment-ndvi", "--ndvi", ndvi, "--out", tmp_path / "l.asc",
               "--greenery-min", "-0.1", "--construction-min", "0.2")
    assert code == 1
    assert "greenery_min" in capsys.readouterr().err
    assert not (tmp_path / "l.asc").exists()


def test_thresholds_checked_before_inputs(tmp_path, capsys):
    code = run("segment-ndvi", "--ndvi", tmp_path / "nope.asc", "--out", tmp_path / "l.asc",
               "--greenery-min", "-0.1", "--construction-min", "0.2")
    assert code == 1
    assert "greenery_min" in capsys.readouterr().err


# --------------------------------------------------------------------------
# build-scene


def box_ply(path, labels=True):
    v = [(x, y, z) for z in (0, 3) for y in (0, 2) for x in (0, 4)]
    f = [(0, 2, 3, 1), (4, 5, 7, 6), (0, 1, 5, 4), (2, 6, 7, 3), (0, 4, 6, 2), (1, 3, 7, 5)]
    lab = [C, C, C, C, G, G, G, G] if labels else None
    return write_ascii_ply(path, v, f, lab)


def cloud_ply(path):
    v = [(x, y, z) for z in (0, 3) for y in (0, 2) for x in (0, 4)]
    return write_ascii_ply(path, [(a + 0.01, b, c) for a, b, c in v], None,
                           [C, C, C, C, G, G, G, G])


def test_build_scene_labeled_passthrough(tmp_path, ndvi_inputs):
    ndvi, dsm = ndvi_inputs
    mesh = box_ply(tmp_path / "m.ply")
    out = tmp_path / "scene"
    assert run("build-scene", "--mesh", mesh, "--dsm", dsm, "--ndvi", ndvi, "--out-dir", out) == 0
    near = load_labeled_mesh(out / "near.ply")
    assert near.vertex_labels.tolist() == [C, C, C, C, G, G, G, G]
    assert near.mesh.n_triangles == 12
    far = load_labeled_mesh(out / "far.ply")
    assert far.mesh.n_triangles == 2 * 5 * 5
    assert set(np.unique(far.triangle_labels)) == {G, W, C}


def test_build_scene_transfer_is_reproducible(tmp_path):
    mesh = box_ply(tmp_path / "m.ply", labels=False)
    cloud = cloud_ply(tmp_path / "c.ply")
    for d in ("a", "b"):
        assert run("build-scene", "--mesh", mesh, "--cloud", cloud, "--out-dir", tmp_path / d) == 0
    a = (tmp_path / "a" / "near.ply").read_bytes()
    assert a == (tmp_path / "b" / "near.ply").read_bytes()
    assert load_labeled_mesh(tmp_path / "a" / "near.ply").vertex_labels.tolist() == \
        [C, C, C, C, G, G, G, G]


def test_build_scene_from_source_mesh_is_reproducible(tmp_path):
    mesh = box_ply(tmp_path / "m.ply", labels=False)
    src = box_ply(tmp_path / "src.ply")
    for d in ("a", "b"):
        assert run("build-scene", "--mesh", mesh, "--label-source-mesh", src, "--density", 50,
                   "--seed", 3, "--out-dir", tmp_path / d) == 0
    assert (tmp_path / "a" / "near.ply").read_bytes() == (tmp_path / "b" / "near.ply").read_bytes()


def test_build_scene_needs_label_source(tmp_path, capsys):
    mesh = box_ply(tmp_path / "m.ply", labels=False)
    assert run("build-scene", "--mesh", mesh, "--out-dir", tmp_path / "o") == 1
    assert "label source required" in capsys.readouterr().err


# --------------------------------------------------------------------------
# fixtures and assess


def write_fixtures(tmp_path, name, *extra):
    assert run("fixtures", "--name", name, "--out-dir", tmp_path / "fx", *extra) == 0
    return tmp_path / "fx" / name


def assess_args(fx, out, *extra):
    return ("assess", "--near-mesh", fx / "near.ply", "--far-mesh", fx / "far.ply",
            "--windows", fx / "windows.csv", "--out", out, *extra)


def test_fixtures_written(tmp_path):
    assert run("fixtures", "--out-dir", tmp_path, "--n-windows", 3, "--width", 30,
               "--height", 30) == 0
    for name in ("empty-sky", "full-wall", "half-wall", "quad-split", "synthetic-city"):
        meta = json.loads((tmp_path / name / "fixture.json").read_text())
        assert meta["name"] == name and meta["camera"]["width"] == 30
        assert (tmp_path / name / "near.ply").exists()
    assert len(load_windows(tmp_path / "synthetic-city" / "windows.csv")) == 3
    assert json.loads((tmp_path / "quad-split" / "fixture.json").read_text())["expected"] == \
        [0.25] * 4


def test_fixtures_unknown_name(tmp_path, capsys):
    assert run("fixtures", "--name", "nope", "--out-dir", tmp_path) == 2
    assert "nope" in capsys.readouterr().err


def test_assess_empty_sky(tmp_path):
    fx = write_fixtures(tmp_path, "empty-sky")
    assert run(*assess_args(fx, tmp_path / "r.csv")) == 0
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[1:] == ["w0,0.000000,0.000000,1.000000,0.000000"]
    timing = json.loads((tmp_path / "r.timing.json").read_text())
    assert timing["n_windows"] == 1


def test_assess_synthetic_city_100(tmp_path, capsys):
    fx = write_fixtures(tmp_path, "synthetic-city", "--n-windows", 100)
    assert run(*assess_args(fx, tmp_path / "r.csv", "--timing-json", tmp_path / "t.json")) == 0
    recs = read_csv(tmp_path / "r.csv")
    assert len(recs) == 100
    assert [r.window_id for r in recs] == [w.id for w in load_windows(fx / "windows.csv")]
    timing = json.loads((tmp_path / "t.json").read_text())
    assert timing["render_s"] > 0 and timing["count_s"] > 0 and timing["prepare_s"] > 0
    out = capsys.readouterr().out
    assert "render_mean_s" in out and "count_mean_s" in out


@pytest.mark.parametrize("name", ["empty-sky", "full-wall", "half-wall", "quad-split"])
def test_assess_with_oracle(tmp_path, name, capsys):
    fx = write_fixtures(tmp_path, name)
    cutoff = json.loads((fx / "fixture.json").read_text())["cutoff_m"]
    assert run(*assess_args(fx, tmp_path / "r.csv", "--use-oracle", "--cutoff-m", cutoff)) == 0
    rmse = json.loads((tmp_path / "r.timing.json").read_text())["oracle_rmse"]
    assert all(v <= 0.005 for v in rmse.values()), rmse
    assert "rmse_construction" in capsys.readouterr().out


def test_assess_keep_going_writes_failures(tmp_path, monkeypatch):
    fx = write_fixtures(tmp_path, "empty-sky", "--width", 8, "--height", 8)
    from winview import wvi
    from winview.render import ViewImage

    def broken(scene, cam):
        return ViewImage(np.full((8, 8, 3), 7, dtype=np.uint8))
    monkeypatch.setattr(wvi, "render_view", broken)
    assert run(*assess_args(fx, tmp_path / "r.csv", "--width", 8, "--height", 8)) == 2
    assert run(*assess_args(fx, tmp_path / "r.csv", "--width", 8, "--height", 8,
                            "--keep-going")) == 0
    assert (tmp_path / "r.csv").read_text().count("\n") == 1
    assert (tmp_path / "r.csv.failures.csv").read_text().startswith("id,error\nw0,")


def test_assess_unwritable_output(tmp_path, capsys):
    fx = write_fixtures(tmp_path, "empty-sky", "--width", 8, "--height", 8)
    assert run(*assess_args(fx, tmp_path / "no" / "dir" / "r.csv", "--width", 8,
                            "--height", 8)) == 2
    assert "runtime error" in capsys.readouterr().err


def test_assess_missing_windows(tmp_path, capsys):
    fx = write_fixtures(tmp_path, "empty-sky")
    os.remove(fx / "windows.csv")
    assert run(*assess_args(fx, tmp_path / "r.csv")) == 1
    assert "windows.csv" in capsys.readouterr().err


def test_assess_is_idempotent(tmp_path):
    fx = write_fixtures(tmp_path, "synthetic-city", "--n-windows", 5)
    outs = []
    for k in range(2):
        assert run(*assess_args(fx, tmp_path / f"r{k}.csv", "--width", 200, "--height", 150,
                                "--dump-images", tmp_path / f"img{k}")) == 0
        outs.append((tmp_path / f"r{k}.csv").read_bytes())
    assert outs[0] == outs[1]
    for name in os.listdir(tmp_path / "img0"):
        assert (tmp_path / "img0" / name).read_bytes() == (tmp_path / "img1" / name).read_bytes()


def test_fixtures_idempotent(tmp_path):
    for d in ("a", "b"):
        assert run("fixtures", "--out-dir", tmp_path / d, "--n-windows", 4) == 0
    for name in ("quad-split", "synthetic-city"):
        for f in ("near.ply", "far.ply", "windows.csv", "fixture.json"):
            assert (tmp_path / "a" / name / f).read_bytes() == \
                (tmp_path / "b" / name / f).read_bytes()


# --------------------------------------------------------------------------
# config file


def test_config_file_and_flag_override(tmp_path):
    fx = write_fixtures(tmp_path, "full-wall")
    ini = tmp_path / "run.ini"
    ini.write_text("[winview]\nwidth = 40\nheight = 30\nworkers = 2\n"
                   f"dump_images = {tmp_path / 'img'}\n")
    assert run(*assess_args(fx, tmp_path / "r.csv", "--config", ini, "--width", 20)) == 0
    head = (tmp_path / "img" / "w0.ppm").read_bytes()[:12]
    assert head.startswith(b"P6\n20 30\n")
    timing = json.loads((tmp_path / "r.timing.json").read_text())
    assert timing["workers"] == 2


def test_config_file_errors(tmp_path, capsys):
    fx = write_fixtures(tmp_path, "empty-sky")
    bad = tmp_path / "bad.ini"
    bad.write_text("[winview]\nwidht = 40\n")
    assert run(*assess_args(fx, tmp_path / "r.csv", "--config", bad)) == 1
    assert "widht" in capsys.readouterr().err
    bad.write_text("[winview]\nwidth = forty\n")
    assert run(*assess_args(fx, tmp_path / "r.csv", "--config", bad)) == 1
    assert run(*assess_args(fx, tmp_path / "r.csv", "--config", tmp_path / "none.ini")) == 1


@pytest.mark.parametrize("flag, value", [("--width", 0), ("--fov-deg", 180), ("--workers", 0),
                                         ("--near-m", -1), ("--cutoff-m", 0)])
def test_invalid_numbers_rejected(tmp_path, flag, value):
    fx = write_fixtures(tmp_path, "empty-sky")
    assert run(*assess_args(fx, tmp_path / "r.csv", flag, value)) == 1
    assert not (tmp_path / "r.csv").exists()


# --------------------------------------------------------------------------
# bench


def bench(tmp_path, n, workers=1, name="t.json"):
    assert run("bench", "--n-windows", n, "--workers", workers,
               "--timing-json", tmp_path / name) == 0
    return json.loads((tmp_path / name).read_text())


@pytest.mark.slow
def test_bench_split(tmp_path, capsys):
    many = bench(tmp_path, 100)
    assert many["triangles"] >= 100_000 and many["n_windows"] == 100
    assert many["prepare_calls"] == 1
    assert many["count_mean_s"] <= 0.25 * many["render_mean_s"]
    out = capsys.readouterr().out
    assert "1 window view generation" in out and "2 quantification of WVIs" in out
    assert "scene preparations run" in out


@pytest.mark.slow
def test_bench_per_window_cost_does_not_grow_with_batch(tmp_path):
    # Render cost depends on what a window sees, so the view is held fixed:
    # one window vs. 100 windows with the same pose.
    fx = tmp_path / "city"
    assert run("fixtures", "--name", "synthetic-city", "--out-dir", fx, "--n-windows", 1) == 0
    fx = fx / "synthetic-city"
    w = load_windows(fx / "windows.csv")[0]
    save_windows(tmp_path / "one.csv", [w])
    save_windows(tmp_path / "many.csv",
                 [WindowSpec(f"w{k}", w.position, w.heading_deg) for k in range(100)])
    res = {}
    for name in ("one", "one", "many"):
        assert run("bench", "--near-mesh", fx / "near.ply", "--far-mesh", fx / "far.ply",
                   "--windows", tmp_path / f"{name}.csv", "--timing-json",
                   tmp_path / "t.json") == 0
        res[name] = json.loads((tmp_path / "t.json").read_text())
    assert res["many"]["prepare_calls"] == 1 and res["many"]["n_windows"] == 100
    ratio = res["many"]["render_mean_s"] / res["one"]["render_mean_s"]
    assert 0.5 <= ratio <= 2.0, ratio


def _cpus():
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count()


@pytest.mark.slow
@pytest.mark.skipif(_cpus() < 2, reason="parallel speedup needs more than one CPU")
def test_bench_workers_speedup(tmp_path):
    fx = write_fixtures(tmp_path, "synthetic-city", "--n-windows", 100)
    times = {}
    for workers in (1, 8):
        out = tmp_path / f"r{workers}.csv"
        assert run(*assess_args(fx, out, "--workers", workers)) == 0
        times[workers] = json.loads((tmp_path / f"r{workers}.timing.json").read_text())["wall_s"]
    assert (tmp_path / "r1.csv").read_bytes() == (tmp_path / "r8.csv").read_bytes()
    assert times[8] < times[1]
