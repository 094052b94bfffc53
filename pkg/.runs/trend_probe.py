import numpy as np, time
from advrf.renderer import load_checkpoint, RenderConfig, render_image
from advrf.sweeps import _dataset_for, make_edited_target, SweepSpec, EDIT_KINDS
from advrf.attacks import AttackConfig, low_intensity_attack, patch_attack, avg_l2_distance
from advrf.training import psnr

params = load_checkpoint('/root/pkg/.runs/ckpt_k16.bin')
spec = SweepSpec(kind='views', s_values=[10], k_range=[1], scenes=1, repeats=1,
                 image_size=48, k_samples=16, steps=1000, seed=0)
for scene_idx in (0, 1):
    ds = _dataset_for(spec, 10, scene_idx)
    tv = ds.target_views[0]
    edit_kind = EDIT_KINDS[scene_idx % 3]
    target = make_edited_target(ds, edit_kind, seed=1)
    rc = RenderConfig(near=ds.near, far=ds.far, k_samples=16, seed=0)
    clean = render_image(params, ds.source_views, tv.pose, tv.intrinsics, rc).data
    print('scene %d (%s): clean PSNR %.1f, baseline dist %.4f' % (
        scene_idx, edit_kind, psnr(clean, tv.image), avg_l2_distance(clean, target)), flush=True)
    for k in (1, 10):
        cfg = AttackConfig(mode='low-intensity', epsilon=0.01, steps=1000, k_samples=16,
                           attacked_views=list(range(k)), seed=3)
        t0 = time.time()
        res = low_intensity_attack(params, ds, target, cfg)
        print('  low-int k=%2d: dist %.4f in %.0fs' % (k, res.final_distance, time.time()-t0), flush=True)
    for size, k in ((20, 10), (2, 10), (20, 1)):
        cfg = AttackConfig(mode='patch', patch_size=size, steps=400, k_samples=16,
                           attacked_views=list(range(k)), seed=3)
        t0 = time.time()
        res = patch_attack(params, ds, target, cfg)
        print('  patch %2dx%-2d k=%2d: dist %.4f in %.0fs' % (size, size, k, res.final_distance, time.time()-t0), flush=True)
