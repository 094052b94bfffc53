import sys, time
sys.path.insert(0, "/root/pkg/tests")
import acceptance_defs as defs
from advrf.sweeps import run_sweep, save_result_json, write_csv
from advrf.plotting import plot_svg

def log(msg):
    print(f"[{time.strftime('%H:%M:%S')}] {msg}", flush=True)

assert defs.SWEEP_MODEL_PATH.is_file(), "sweep model missing"
defs.ARTIFACTS.mkdir(exist_ok=True)

for spec_fn, result_path, tag in (
    (defs.views_sweep_spec, defs.VIEWS_RESULT, "views"),
    (defs.patch_sweep_spec, defs.PATCH_RESULT, "patch"),
):
    spec = spec_fn()
    log(f"starting {tag} sweep (hash {spec.config_hash()})")
    result = run_sweep(spec, defs.SWEEP_MODEL_PATH, workers=2,
                       cache_dir=defs.SWEEP_CACHE, log=log)
    save_result_json(result, result_path)
    write_csv(result, result_path.with_suffix(".csv"))
    plot_svg(result, result_path.with_suffix(".svg"))
    log(f"{tag} sweep done: wall {result.wall_time:.0f}s, compute {result.total_run_time:.0f}s")
    for c in sorted(result.cells, key=lambda c: (c.series, c.k)):
        log(f"  series={c.series} k={c.k}: mean={c.mean_distance:.5f} "
            f"std={c.std_distance:.5f} success={c.success_rate:.2f} n={c.n_runs}")
log("ALL SWEEPS DONE")
