import numpy as np, time
from advrf.renderer import load_checkpoint
from advrf.sweeps import _dataset_for, make_edited_target, SweepSpec
from advrf.attacks import AttackConfig, low_intensity_attack

params = load_checkpoint('/root/pkg/.runs/ckpt_k16.bin')
spec = SweepSpec(kind='views', s_values=[10], k_range=[1], scenes=1, repeats=1,
                 image_size=48, k_samples=16, steps=1000, seed=0)
ds = _dataset_for(spec, 10, 0)
target = make_edited_target(ds, 'modify', seed=1)
for sf, mu in ((0.2, 0.9), (0.05, 0.9), (0.1, 0.5), (0.1, 0.99), (0.3, 0.9)):
    cfg = AttackConfig(mode='low-intensity', epsilon=0.01, steps=1000, k_samples=16,
                       step_fraction=sf, momentum_mu=mu,
                       attacked_views=list(range(10)), seed=3)
    t0 = time.time()
    res = low_intensity_attack(params, ds, target, cfg)
    print('sf=%.2f mu=%.2f: k10 dist %.4f (%.0fs)' % (sf, mu, res.final_distance, time.time()-t0), flush=True)
