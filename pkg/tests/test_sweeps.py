import json
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from advrf.errors import ContractError, FormatError
from advrf.plotting import plot_svg
from advrf.renderer import save_checkpoint
from advrf.sweeps import (
    SweepCell,
    SweepResult,
    SweepSpec,
    execute_run,
    load_result_json,
    make_edited_target,
    read_csv,
    run_sweep,
    save_result_json,
    scene_edit_for,
    write_csv,
    RunTask,
    _dataset_for,
)

TINY = dict(scenes=1, repeats=1, image_size=12, k_samples=4, steps=3, seed=5)


@pytest.fixture(scope="module")
def ckpt(tmp_path_factory, tiny_trained):
    params, _ = tiny_trained
    path = tmp_path_factory.mktemp("ck") / "model.bin"
    save_checkpoint(params, path)
    return path


def make_result():
    cells = [
        SweepCell(series=10, k=1, mean_distance=0.09, std_distance=0.01, success_rate=0.0, n_runs=4),
        SweepCell(series=10, k=10, mean_distance=0.02, std_distance=0.005, success_rate=0.5, n_runs=4),
        SweepCell(series=4, k=1, mean_distance=0.07, std_distance=0.02, success_rate=0.0, n_runs=4),
    ]
    return SweepResult(kind="views", cells=cells, seed=3, config_hash="abc", commit="deadbee")


# -- spec validation -----------------------------------------------------------

def test_spec_rejects_k_above_s():
    with pytest.raises(ContractError):
        SweepSpec(kind="views", s_values=[4], k_range=[5], **{k: v for k, v in TINY.items()
                                                              if k not in ("seed",)})


def test_spec_hash_changes_with_content():
    a = SweepSpec(kind="views", s_values=[4], k_range=[1], **TINY)
    b = SweepSpec(kind="views", s_values=[4], k_range=[2], **TINY)
    assert a.config_hash() != b.config_hash()


# -- edits ----------------------------------------------------------------------

def test_edited_target_differs_and_kinds_cycle():
    spec = SweepSpec(kind="views", s_values=[3], k_range=[1], **TINY)
    for scene_idx, kind in [(0, "modify"), (1, "delete"), (2, "add")]:
        ds = _dataset_for(spec, 3, scene_idx)
        target = make_edited_target(ds, kind, seed=7)
        assert target.shape == ds.target_views[0].image.shape
        assert not np.array_equal(target, ds.target_views[0].image)


def test_scene_edit_for_kinds():
    spec = SweepSpec(kind="views", s_values=[3], k_range=[1], **TINY)
    ds = _dataset_for(spec, 3, 0)
    for kind in ("modify", "delete", "add"):
        edit = scene_edit_for(ds, kind, seed=1)
        assert edit.kind == kind


# -- single runs ------------------------------------------------------------------

def test_execute_run_views(ckpt, tiny_trained):
    params, _ = tiny_trained
    spec = SweepSpec(kind="views", s_values=[3], k_range=[2], **TINY)
    out = execute_run(RunTask("views", 3, 2, 0, 0, spec), params)
    assert out["key"] == ["views", 3, 2, 0, 0]
    assert len(out["attacked_views"]) == 2
    assert 0.0 <= out["final_distance"] <= out["baseline_distance"] + 1e-12


def test_execute_run_deterministic(ckpt, tiny_trained):
    params, _ = tiny_trained
    spec = SweepSpec(kind="patch", patch_sizes=[3], k_range=[2], **TINY)
    a = execute_run(RunTask("patch", 3, 2, 0, 0, spec), params)
    b = execute_run(RunTask("patch", 3, 2, 0, 0, spec), params)
    a.pop("wall_time"), b.pop("wall_time")
    assert a == b


# -- sweep orchestration ------------------------------------------------------------

def test_single_cell_sweep(ckpt):
    spec = SweepSpec(kind="views", s_values=[4], k_range=[4], **TINY)
    result = run_sweep(spec, ckpt, workers=1)
    assert len(result.cells) == 1
    cell = result.cells[0]
    assert cell.n_runs == 1 and cell.series == 4 and cell.k == 4
    assert cell.std_distance == 0.0


def test_sweep_cell_counts(ckpt):
    spec = SweepSpec(kind="views", s_values=[3], k_range=[1, 3], scenes=2, repeats=2,
                     image_size=12, k_samples=4, steps=2, seed=1)
    result = run_sweep(spec, ckpt, workers=1)
    assert len(result.cells) == 2
    for cell in result.cells:
        assert cell.n_runs == 4  # scenes x repeats exactly


def test_sweep_missing_checkpoint(tmp_path):
    spec = SweepSpec(kind="views", s_values=[3], k_range=[1], **TINY)
    with pytest.raises(FormatError):
        run_sweep(spec, tmp_path / "none.bin", workers=1)


def test_sweep_parallel_equals_serial(ckpt):
    spec = SweepSpec(kind="views", s_values=[3], k_range=[1, 2], scenes=2, repeats=1,
                     image_size=12, k_samples=4, steps=2, seed=2)
    serial = run_sweep(spec, ckpt, workers=1)
    parallel = run_sweep(spec, ckpt, workers=2)
    for cs, cp in zip(serial.cells, parallel.cells):
        assert cs == cp


def test_sweep_cache_resume(ckpt, tmp_path):
    spec = SweepSpec(kind="views", s_values=[3], k_range=[2], **TINY)
    first = run_sweep(spec, ckpt, workers=1, cache_dir=tmp_path)
    cached = list(Path(tmp_path).glob("run_*.json"))
    assert len(cached) == 1
    second = run_sweep(spec, ckpt, workers=1, cache_dir=tmp_path)
    assert first.cells == second.cells
    assert second.total_run_time == first.total_run_time  # carried through the cache


def test_sweep_rerun_bitwise_identical_csv(ckpt, tmp_path):
    spec = SweepSpec(kind="views", s_values=[3], k_range=[1], **TINY)
    r1 = run_sweep(spec, ckpt, workers=1)
    r2 = run_sweep(spec, ckpt, workers=1)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(r1, p1)
    write_csv(r2, p2)
    assert p1.read_bytes() == p2.read_bytes()


# -- csv ------------------------------------------------------------------------------

def test_csv_header_only_for_empty_grid(tmp_path):
    result = SweepResult(kind="views", cells=[], seed=0, config_hash="", commit="")
    path = tmp_path / "empty.csv"
    write_csv(result, path)
    content = path.read_bytes()
    assert content == b"sweep_kind,series,k,mean_distance,std_distance,success_rate,n_runs\n"


def test_csv_single_cell_two_lines(tmp_path):
    result = SweepResult(kind="views", cells=[make_result().cells[0]], seed=0,
                         config_hash="", commit="")
    path = tmp_path / "one.csv"
    write_csv(result, path)
    assert len(path.read_text().rstrip("\n").split("\n")) == 2


def test_csv_round_trip_exact_values(tmp_path):
    result = make_result()
    # adversarially precise values to exercise the 17-digit format
    result.cells[0].mean_distance = 0.1234567890123456789
    result.cells[0].std_distance = 1e-17
    path = tmp_path / "r.csv"
    write_csv(result, path)
    back = read_csv(path)
    for a, b in zip(sorted(result.cells, key=lambda c: (c.series, c.k)), back.cells):
        assert a.mean_distance == b.mean_distance
        assert a.std_distance == b.std_distance
        assert a.success_rate == b.success_rate
        assert a.n_runs == b.n_runs


def test_csv_rows_sorted_and_lf_terminated(tmp_path):
    path = tmp_path / "s.csv"
    write_csv(make_result(), path)
    blob = path.read_bytes()
    assert b"\r" not in blob and blob.endswith(b"\n")
    rows = [ln.split(",") for ln in blob.decode().rstrip().split("\n")[1:]]
    keys = [(int(r[1]), int(r[2])) for r in rows]
    assert keys == sorted(keys)


def test_csv_rejects_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("nope\n")
    with pytest.raises(FormatError):
        read_csv(p)


def test_result_json_round_trip(tmp_path):
    result = make_result()
    result.total_run_time = 12.5
    p = tmp_path / "r.json"
    save_result_json(result, p)
    back = load_result_json(p)
    assert back.cells == result.cells
    assert back.total_run_time == 12.5
    assert back.config_hash == result.config_hash


# -- svg ---------------------------------------------------------------------------------

def test_svg_two_point_polyline(tmp_path):
    cells = [SweepCell(series=10, k=1, mean_distance=0.08, std_distance=0.01,
                       success_rate=0, n_runs=2),
             SweepCell(series=10, k=2, mean_distance=0.05, std_distance=0.01,
                       success_rate=0, n_runs=2)]
    result = SweepResult(kind="views", cells=cells, seed=0, config_hash="h", commit="c")
    path = tmp_path / "p.svg"
    plot_svg(result, path)
    root = ET.parse(path).getroot()
    polylines = [el for el in root.iter() if el.tag.endswith("polyline")]
    assert len(polylines) == 1
    assert len(polylines[0].attrib["points"].split()) == 2


def test_svg_legend_matches_series_count(tmp_path):
    path = tmp_path / "p.svg"
    plot_svg(make_result(), path)
    text = path.read_text()
    root = ET.parse(path).getroot()
    polylines = [el for el in root.iter() if el.tag.endswith("polyline")]
    assert len(polylines) == 2  # series 4 and 10
    assert text.count("S (source views) =") == 2


def test_svg_well_formed_and_labeled(tmp_path):
    path = tmp_path / "p.svg"
    plot_svg(make_result(), path)
    root = ET.parse(path).getroot()  # raises on malformed XML
    assert root.tag.endswith("svg")
    text = path.read_text()
    assert "attacked views (k)" in text
    assert "mean avg-L2 distance" in text


def test_svg_empty_grid_rejected(tmp_path):
    empty = SweepResult(kind="views", cells=[], seed=0, config_hash="", commit="")
    with pytest.raises(ContractError):
        plot_svg(empty, tmp_path / "x.svg")
