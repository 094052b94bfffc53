import json, time, sys
sys.path.insert(0, "/root/pkg/tests")
from threadpoolctl import threadpool_limits
import acceptance_defs as defs
from advrf.training import train

defs.ARTIFACTS.mkdir(exist_ok=True)
with threadpool_limits(limits=1):
    t0 = time.time()
    params, train_report = train(defs.GATE_TRAIN_CONFIG, checkpoint_path=defs.MODEL_PATH,
                                 log=lambda m: print(m, flush=True))
    elapsed = time.time() - t0
report = {
    "config": defs.GATE_TRAIN_CONFIG.__dict__,
    "wall_time_s": elapsed,
    "final_psnr_db": train_report.final_psnr(),
    "loss_curve": train_report.loss_curve,
}
defs.TRAIN_REPORT_PATH.write_text(json.dumps(report))
print("C4 done:", report["wall_time_s"], report["final_psnr_db"], flush=True)
