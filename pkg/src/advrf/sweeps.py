"""Experiment orchestration: the attacked-view-count sweep and the patch
size sweep, with repeats, deterministic seeding, worker-pool execution,
per-run result caching, and CSV/JSON reporting.

Every individual run is identified by (kind, series, k, scene, repeat);
its seeds derive from the sweep seed and that key alone, so any worker
count, execution order, or resume-from-cache produces identical numbers.
"""

from __future__ import annotations

import json
import hashlib
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, run_attack
from .errors import ContractError, FormatError
from .renderer import RendererParams, load_checkpoint
from .scenes import (
    MultiViewDataset,
    SceneEdit,
    ScenePrimitive,
    apply_edit,
    make_dataset,
    oracle_render,
    random_scene,
)

EDIT_KINDS = ("modify", "delete", "add")


@dataclass
class SweepSpec:
    kind: str = "views"  # "views" | "patch"
    s_values: list[int] = field(default_factory=lambda: [10, 8, 6, 5, 4])
    patch_sizes: list[int] = field(default_factory=lambda: [2, 5, 10, 20])
    k_range: list[int] | None = None  # None = 1..S (or 1..10 for patch)
    scenes: int = 10
    repeats: int = 10
    image_size: int = 48
    k_samples: int = 16
    steps: int = 1000
    epsilon: float = 0.01
    step_fraction: float = 0.1
    patch_step: float = 0.05
    momentum_mu: float = 0.9
    success_threshold: float = 0.015
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("views", "patch"):
            raise ContractError(f"unknown sweep kind {self.kind!r}")
        if min(self.scenes, self.repeats) < 1:
            raise ContractError("scenes and repeats must be >= 1")
        for s in self.s_values:
            for k in self.k_range or range(1, s + 1):
                if self.kind == "views" and k > s:
                    raise ContractError(f"cannot attack {k} of {s} views")

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class SweepCell:
    series: int  # S (views sweep) or patch size (patch sweep)
    k: int
    mean_distance: float
    std_distance: float
    success_rate: float
    n_runs: int


@dataclass
class SweepResult:
    kind: str
    cells: list[SweepCell]
    seed: int
    config_hash: str
    commit: str
    wall_time: float = 0.0  # this invocation (cache hits are cheap)
    total_run_time: float = 0.0  # summed attack compute across all runs

    def cell(self, series: int, k: int) -> SweepCell:
        for c in self.cells:
            if c.series == series and c.k == k:
                return c
        raise KeyError(f"no cell ({series}, {k})")


def _commit_id() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, timeout=10)
        return out.stdout.strip() or "unknown"
    except OSError:
        return "unknown"


def _run_seed(spec_seed: int, kind: str, series: int, k: int, scene: int, repeat: int) -> int:
    key = f"{spec_seed}/{kind}/{series}/{k}/{scene}/{repeat}".encode("ascii")
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "little")


def scene_edit_for(dataset: MultiViewDataset, edit_kind: str, seed: int,
                   attempt: int = 0) -> SceneEdit:
    """One deterministic edit of the requested kind for this scene."""
    rng = np.random.default_rng(seed)
    prims = dataset.scene.primitives
    idx = int(rng.integers(len(prims)))
    if edit_kind == "delete":
        # smallest primitive first: edits stay local, like the
        # small-region image edits the attack is meant to reproduce;
        # later attempts fall back to larger ones until one is visible
        order = np.argsort([float(np.max(p.size)) for p in prims])
        return SceneEdit(kind="delete", target_index=int(order[attempt % len(prims)]))
    if edit_kind == "modify":
        prim = prims[idx]
        shift = rng.uniform(0.25, 0.45, 3) * rng.choice([-1.0, 1.0], 3)
        albedo = np.clip(prim.albedo + shift, 0.0, 1.0)
        grown = np.atleast_1d(prim.size) * 1.1
        return SceneEdit(kind="modify", target_index=idx,
                         new_primitive=ScenePrimitive(kind=prim.kind, center=prim.center,
                                                      size=grown, albedo=albedo))
    if edit_kind == "add":
        center = rng.uniform(-0.45, 0.45, size=3)
        return SceneEdit(kind="add",
                         new_primitive=ScenePrimitive(kind="sphere", center=center,
                                                      size=[float(rng.uniform(0.12, 0.2))],
                                                      albedo=rng.uniform(0.2, 1.0, 3)))
    raise ContractError(f"unknown edit kind {edit_kind!r}")


def make_edited_target(dataset: MultiViewDataset, edit_kind: str, seed: int) -> np.ndarray:
    """Edited ground-truth image: edit the scene, re-render with the oracle."""
    tv = dataset.target_views[0]
    for attempt in range(20):
        edit = scene_edit_for(dataset, edit_kind, seed + 1000 * attempt, attempt=attempt)
        try:
            edited_scene = apply_edit(dataset.scene, edit, check_view=(tv.pose, tv.intrinsics))
        except ValueError:
            continue
        image = oracle_render(edited_scene, tv.pose, tv.intrinsics)
        if not np.array_equal(image, tv.image):
            return image
    raise ContractError(f"could not build a visible {edit_kind!r} edit for {dataset.name}")


@dataclass
class RunTask:
    kind: str
    series: int
    k: int
    scene: int
    repeat: int
    spec: SweepSpec

    def key(self) -> tuple:
        return (self.kind, self.series, self.k, self.scene, self.repeat)


def _dataset_for(spec: SweepSpec, s_views: int, scene_idx: int) -> MultiViewDataset:
    scene = random_scene(spec.seed * 1000 + scene_idx, n_primitives=3)
    return make_dataset(scene, s_views, height=spec.image_size, width=spec.image_size,
                        seed=spec.seed * 1000 + scene_idx, name=f"scene{scene_idx:02d}")


def execute_run(task: RunTask, params: RendererParams) -> dict:
    """Run one attack; the result dict is what gets cached and aggregated."""
    spec = task.spec
    s_views = task.series if task.kind == "views" else 10
    dataset = _dataset_for(spec, s_views, task.scene)
    edit_kind = EDIT_KINDS[task.scene % len(EDIT_KINDS)]
    target = make_edited_target(dataset, edit_kind, _run_seed(spec.seed, "edit", s_views, 0,
                                                              task.scene, 0))
    run_seed = _run_seed(spec.seed, task.kind, task.series, task.k, task.scene, task.repeat)
    rng = np.random.default_rng(run_seed)
    attacked = sorted(int(i) for i in rng.choice(s_views, size=task.k, replace=False))
    config = AttackConfig(
        mode="low-intensity" if task.kind == "views" else "patch",
        epsilon=spec.epsilon,
        steps=spec.steps,
        step_fraction=spec.step_fraction,
        patch_step=spec.patch_step,
        momentum_mu=spec.momentum_mu,
        attacked_views=attacked,
        patch_size=task.series if task.kind == "patch" else 0,
        k_samples=spec.k_samples,
        seed=run_seed,
        success_threshold=spec.success_threshold,
    )
    t0 = time.time()
    result = run_attack(params, dataset, target, config)
    return {
        "key": list(task.key()),
        "edit_kind": edit_kind,
        "attacked_views": attacked,
        "final_distance": result.final_distance,
        "success": bool(result.success),
        "baseline_distance": result.best_distance_curve[0],
        "wall_time": time.time() - t0,
    }


_WORKER_PARAMS: RendererParams | None = None
_WORKER_CACHE: Path | None = None


def _worker_init(checkpoint_path: str, cache_dir: str | None):
    global _WORKER_PARAMS, _WORKER_CACHE
    _WORKER_PARAMS = load_checkpoint(checkpoint_path)
    _WORKER_CACHE = Path(cache_dir) if cache_dir else None


def _cache_name(task: RunTask) -> str:
    kind, series, k, scene, repeat = task.key()
    return f"run_{task.spec.config_hash()}_{kind}_{series}_{k}_{scene}_{repeat}.json"


def _worker_run(task: RunTask) -> dict:
    if _WORKER_CACHE is not None:
        path = _WORKER_CACHE / _cache_name(task)
        if path.is_file():
            return json.loads(path.read_text(encoding="utf-8"))
    out = execute_run(task, _WORKER_PARAMS)
    if _WORKER_CACHE is not None:
        tmp = _WORKER_CACHE / (_cache_name(task) + ".tmp")
        tmp.write_text(json.dumps(out), encoding="utf-8")
        tmp.replace(_WORKER_CACHE / _cache_name(task))
    return out


def _tasks_for(spec: SweepSpec) -> list[RunTask]:
    tasks = []
    if spec.kind == "views":
        for s in spec.s_values:
            for k in spec.k_range or range(1, s + 1):
                for scene in range(spec.scenes):
                    for rep in range(spec.repeats):
                        tasks.append(RunTask("views", s, k, scene, rep, spec))
    else:
        for size in spec.patch_sizes:
            for k in spec.k_range or range(1, 11):
                for scene in range(spec.scenes):
                    for rep in range(spec.repeats):
                        tasks.append(RunTask("patch", size, k, scene, rep, spec))
    return tasks


def run_sweep(spec: SweepSpec, checkpoint_path, workers: int = 1,
              cache_dir=None, log=None) -> SweepResult:
    """Execute every (cell, scene, repeat) attack and aggregate by cell.

    Results are merged by key, so worker count and completion order never
    change the aggregate.  With cache_dir set, finished runs are reused.
    """
    checkpoint_path = Path(checkpoint_path)
    if not checkpoint_path.is_file():
        raise FormatError(f"{checkpoint_path}: checkpoint missing")
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
    tasks = _tasks_for(spec)
    t0 = time.time()
    outcomes: dict[tuple, dict] = {}
    if workers <= 1:
        _worker_init(str(checkpoint_path), str(cache_dir) if cache_dir else None)
        for i, task in enumerate(tasks):
            out = _worker_run(task)
            outcomes[task.key()] = out
            if log:
                log(f"run {i + 1}/{len(tasks)} {task.key()} d={out['final_distance']:.4f}")
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init,
                                 initargs=(str(checkpoint_path),
                                           str(cache_dir) if cache_dir else None)) as pool:
            for task, out in zip(tasks, pool.map(_worker_run, tasks, chunksize=1)):
                outcomes[task.key()] = out
                if log:
                    log(f"run {len(outcomes)}/{len(tasks)} {task.key()} d={out['final_distance']:.4f}")

    cells: dict[tuple[int, int], list[dict]] = {}
    for task in tasks:
        series, k = task.series, task.k
        cells.setdefault((series, k), []).append(outcomes[task.key()])
    cell_list = []
    for (series, k) in sorted(cells):
        runs = cells[(series, k)]
        dists = np.array([r["final_distance"] for r in runs])
        cell_list.append(SweepCell(
            series=series, k=k,
            mean_distance=float(dists.mean()),
            std_distance=float(dists.std()),
            success_rate=float(np.mean([r["success"] for r in runs])),
            n_runs=len(runs),
        ))
    return SweepResult(kind=spec.kind, cells=cell_list, seed=spec.seed,
                       config_hash=spec.config_hash(), commit=_commit_id(),
                       wall_time=time.time() - t0,
                       total_run_time=float(sum(o["wall_time"] for o in outcomes.values())))


# ---------------------------------------------------------------------------
# reporting


CSV_HEADER = "sweep_kind,series,k,mean_distance,std_distance,success_rate,n_runs"


def write_csv(result: SweepResult, path) -> None:
    """Fixed-header CSV, rows sorted by (series, k), 17 significant digits."""
    lines = [CSV_HEADER]
    for c in sorted(result.cells, key=lambda c: (c.series, c.k)):
        lines.append(",".join([
            result.kind, str(c.series), str(c.k),
            format(c.mean_distance, ".17g"), format(c.std_distance, ".17g"),
            format(c.success_rate, ".17g"), str(c.n_runs),
        ]))
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


def read_csv(path) -> SweepResult:
    """Parse a CSV written by write_csv back into a SweepResult (no provenance)."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.split("\n") if ln]
    if not lines or lines[0] != CSV_HEADER:
        raise FormatError(f"{path}: missing or wrong CSV header")
    kind = "views"
    cells = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 7:
            raise FormatError(f"{path}: malformed row {ln!r}")
        kind = parts[0]
        cells.append(SweepCell(series=int(parts[1]), k=int(parts[2]),
                               mean_distance=float(parts[3]), std_distance=float(parts[4]),
                               success_rate=float(parts[5]), n_runs=int(parts[6])))
    return SweepResult(kind=kind, cells=cells, seed=-1, config_hash="", commit="")


def save_result_json(result: SweepResult, path) -> None:
    payload = {
        "kind": result.kind,
        "seed": result.seed,
        "config_hash": result.config_hash,
        "commit": result.commit,
        "wall_time": result.wall_time,
        "total_run_time": result.total_run_time,
        "cells": [asdict(c) for c in result.cells],
    }
    Path(path).write_text(json.dumps(payload, indent=1), encoding="utf-8")


def load_result_json(path) -> SweepResult:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    return SweepResult(kind=d["kind"], cells=[SweepCell(**c) for c in d["cells"]],
                       seed=d["seed"], config_hash=d["config_hash"], commit=d["commit"],
                       wall_time=d.get("wall_time", 0.0),
                       total_run_time=d.get("total_run_time", 0.0))


def run_views_sweep(spec: SweepSpec, checkpoint_path, **kw) -> SweepResult:
    if spec.kind != "views":
        raise ContractError("spec.kind must be 'views'")
    return run_sweep(spec, checkpoint_path, **kw)


def run_patch_sweep(spec: SweepSpec, checkpoint_path, **kw) -> SweepResult:
    if spec.kind != "patch":
        raise ContractError("spec.kind must be 'patch'")
    return run_sweep(spec, checkpoint_path, **kw)
