import sys, time, json
import numpy as np
from advrf.training import TrainConfig, train

tag = sys.argv[1]
kw = json.loads(sys.argv[2])
cfg = TrainConfig(**kw)
t0 = time.time()
def log(msg):
    print(f"[{tag} {time.time()-t0:7.1f}s] {msg}", flush=True)
params, report = train(cfg, checkpoint_path=f"/root/pkg/.runs/ckpt_{tag}.bin", log=log)
log(f"DONE wall={report.wall_time:.0f}s final_psnr={report.final_psnr():.2f}")
