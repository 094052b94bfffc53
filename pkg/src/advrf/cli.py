"""Command line interface.

Subcommands: gen-scenes, train, render, edit, attack, sweep-views,
sweep-patch, report.  Exit codes: 0 success, 1 usage error, 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, run_attack, save_attack_result
from .dataset_io import load_dataset, read_ppm, save_dataset, write_ppm
from .errors import ContractError
from .plotting import plot_svg
from .renderer import load_checkpoint, RenderConfig
from .scenes import SceneEdit, ScenePrimitive, apply_edit, make_dataset, oracle_render, random_scene
from .sweeps import SweepSpec, load_result_json, run_sweep, save_result_json, write_csv
from .training import TrainConfig, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="advrf", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-scenes", help="generate synthetic multi-view datasets")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--count", type=int, default=1, help="number of scenes")
    g.add_argument("--views", type=int, default=10, help="source views per scene")
    g.add_argument("--size", type=int, default=48, help="image width/height")
    g.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="train the renderer")
    t.add_argument("--config", help="JSON file with TrainConfig overrides")
    t.add_argument("--out", required=True, help="checkpoint output path")
    t.add_argument("--steps", type=int, help="override training steps")
    t.add_argument("--report", help="write TrainReport JSON here")
    t.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("render", help="render a dataset's target view")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--dataset", required=True, help="dataset directory")
    r.add_argument("--view", type=int, default=0, help="target view index")
    r.add_argument("--out", required=True, help="output PPM")
    r.add_argument("--k-samples", type=int, default=16)
    r.add_argument("--seed", type=int, default=0)

    e = sub.add_parser("edit", help="apply a scene edit and render the edited target")
    e.add_argument("--dataset", required=True)
    e.add_argument("--edit", required=True, help="edit spec JSON file")
    e.add_argument("--out", required=True, help="edited target PPM")
    e.add_argument("--seed", type=int, default=0)

    a = sub.add_parser("attack", help="run one targeted attack")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--dataset", required=True)
    a.add_argument("--target", required=True, help="edited target PPM")
    a.add_argument("--mode", choices=["low-intensity", "patch"], default="low-intensity")
    a.add_argument("--epsilon", type=float, default=0.01)
    a.add_argument("--steps", type=int, default=1000)
    a.add_argument("--patch-size", type=int, default=10)
    a.add_argument("--views", help="comma-separated attacked view indices (default all)")
    a.add_argument("--k-samples", type=int, default=16)
    a.add_argument("--out", required=True, help="output directory")
    a.add_argument("--seed", type=int, default=0)

    for kind in ("views", "patch"):
        s = sub.add_parser(f"sweep-{kind}", help=f"run the {kind} sweep")
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--ci", action="store_true", help="small CI scale")
        s.add_argument("--full", action="store_true", help="full paper-analog scale")
        s.add_argument("--scenes", type=int)
        s.add_argument("--repeats", type=int)
        s.add_argument("--steps", type=int)
        s.add_argument("--size", type=int, help="image width/height")
        s.add_argument("--series", help="comma-separated S values / patch sizes")
        s.add_argument("--k-range", help="comma-separated attacked-view counts")
        s.add_argument("--workers", type=int, default=1)
        s.add_argument("--cache-dir", help="per-run result cache for resuming")
        s.add_argument("--seed", type=int, default=0)

    rep = sub.add_parser("report", help="write CSV and SVG from sweep result JSONs")
    rep.add_argument("--results", required=True, help="directory with sweep_*.json")
    rep.add_argument("--out", required=True, help="output directory")
    rep.add_argument("--seed", type=int, default=0)
    return p


def _cmd_gen_scenes(args) -> int:
    out = Path(args.out)
    for i in range(args.count):
        scene = random_scene(args.seed + i, n_primitives=3)
        ds = make_dataset(scene, args.views, height=args.size, width=args.size,
                          seed=args.seed + i, name=f"scene{i:02d}")
        save_dataset(ds, out / f"scene{i:02d}")
    print(f"wrote {args.count} dataset(s) under {out}")
    return 0


def _cmd_train(args) -> int:
    overrides = {}
    if args.config:
        overrides = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if args.steps is not None:
        overrides["steps"] = args.steps
    overrides.setdefault("seed", args.seed)
    config = TrainConfig(**overrides)
    _, report = train(config, checkpoint_path=args.out,
                      log=lambda m: print(m, flush=True))
    print(f"checkpoint: {args.out}  held-out PSNR: {report.final_psnr():.2f} dB")
    if args.report:
        Path(args.report).write_text(report.to_json(), encoding="utf-8")
    return 0


def _cmd_render(args) -> int:
    params = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset)
    tv = ds.target_views[args.view]
    rc = RenderConfig(near=ds.near, far=ds.far, k_samples=args.k_samples, seed=args.seed)
    from .renderer import render_image

    img = render_image(params, ds.source_views, tv.pose, tv.intrinsics, rc)
    write_ppm(args.out, np.clip(img.data, 0.0, 1.0))
    print(f"wrote {args.out}")
    return 0


def _cmd_edit(args) -> int:
    ds = load_dataset(args.dataset)
    spec = json.loads(Path(args.edit).read_text(encoding="utf-8"))
    prim = spec.get("new_primitive")
    edit = SceneEdit(
        kind=spec["kind"],
        target_index=spec.get("target_index", 0),
        new_primitive=ScenePrimitive(**prim) if prim else None,
    )
    tv = ds.target_views[0]
    edited_scene = apply_edit(ds.scene, edit, check_view=(tv.pose, tv.intrinsics))
    image = oracle_render(edited_scene, tv.pose, tv.intrinsics)
    write_ppm(args.out, image)
    print(f"wrote {args.out}")
    return 0


def _cmd_attack(args) -> int:
    if args.epsilon < 0:
        raise ContractError("epsilon must be >= 0")
    params = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset)
    target = read_ppm(args.target)
    attacked = None
    if args.views:
        attacked = [int(v) for v in args.views.split(",") if v != ""]
    config = AttackConfig(mode=args.mode, epsilon=args.epsilon, steps=args.steps,
                          patch_size=args.patch_size, attacked_views=attacked,
                          k_samples=args.k_samples, seed=args.seed)
    result = run_attack(params, ds, target, config)
    size = f"eps{args.epsilon:g}" if args.mode == "low-intensity" else f"p{args.patch_size}"
    k = len(result.attacked_views)
    path = save_attack_result(result, args.out, ds.name, k, size, args.seed, config)
    print(f"final distance {result.final_distance:.5f} success={result.success} -> {path}")
    return 0


def _sweep_spec(args, kind: str) -> SweepSpec:
    if args.ci and args.full:
        raise ContractError("--ci and --full are mutually exclusive")
    kw = {"kind": kind, "seed": args.seed}
    if args.ci:
        kw.update(scenes=3, repeats=3, image_size=32, k_samples=16, steps=300)
        if kind == "views":
            kw.update(s_values=[4], k_range=[1, 2, 4])
        else:
            kw.update(patch_sizes=[2, 10], k_range=[1, 4])
    elif args.full:
        kw.update(scenes=10, repeats=10, image_size=48, k_samples=16, steps=1000)
    if args.scenes is not None:
        kw["scenes"] = args.scenes
    if args.repeats is not None:
        kw["repeats"] = args.repeats
    if args.steps is not None:
        kw["steps"] = args.steps
    if args.size is not None:
        kw["image_size"] = args.size
    if args.series:
        vals = [int(v) for v in args.series.split(",")]
        kw["s_values" if kind == "views" else "patch_sizes"] = vals
    if args.k_range:
        kw["k_range"] = [int(v) for v in args.k_range.split(",")]
    return SweepSpec(**kw)


def _cmd_sweep(args, kind: str) -> int:
    spec = _sweep_spec(args, kind)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_sweep(spec, args.checkpoint, workers=args.workers,
                       cache_dir=args.cache_dir, log=lambda m: print(m, flush=True))
    save_result_json(result, out / f"sweep_{kind}.json")
    write_csv(result, out / f"sweep_{kind}.csv")
    plot_svg(result, out / f"sweep_{kind}.svg")
    print(f"sweep done: {len(result.cells)} cells, compute {result.total_run_time:.0f}s "
          f"-> {out / f'sweep_{kind}.csv'}")
    return 0


def _cmd_report(args) -> int:
    results = sorted(Path(args.results).glob("sweep_*.json"))
    if not results:
        raise ContractError(f"no sweep_*.json under {args.results}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for rpath in results:
        result = load_result_json(rpath)
        stem = rpath.stem
        write_csv(result, out / f"{stem}.csv")
        plot_svg(result, out / f"{stem}.svg")
        print(f"{rpath} -> {out / (stem + '.csv')}, {out / (stem + '.svg')}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gen-scenes":
            return _cmd_gen_scenes(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "render":
            return _cmd_render(args)
        if args.command == "edit":
            return _cmd_edit(args)
        if args.command == "attack":
            return _cmd_attack(args)
        if args.command == "sweep-views":
            return _cmd_sweep(args, "views")
        if args.command == "sweep-patch":
            return _cmd_sweep(args, "patch")
        if args.command == "report":
            return _cmd_report(args)
        parser.error(f"unknown command {args.command!r}")
    except ContractError as exc:
        print(f"advrf: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"advrf: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
