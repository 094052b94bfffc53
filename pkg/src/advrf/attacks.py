"""Targeted adversarial optimization of source-view pixels.

Two modes drive the rendered target view toward an edited ground truth:

* low-intensity: momentum-iterative sign steps on every pixel of the
  attacked views, projected after each step onto the L-inf ball of
  radius epsilon around the originals and clipped to [0,1];
* patch: per-view centered square patches whose pixels are optimized
  with the same sign-momentum steps, bounded only by [0,1].

Gradients w.r.t. pixels are obtained by a staged backward pass: one tape
per image chunk feeding cotangents into one encoder tape, so memory stays
bounded and views whose pixels never change are encoded and gathered
exactly once per run.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .dataset_io import write_ppm
from .errors import ContractError, DimensionError
from .renderer import (
    RenderConfig,
    RendererParams,
    build_ray_plan,
    encode_views_stacked,
    render_chunk,
    render_image,
)
from .scenes import MultiViewDataset


@dataclass
class AttackConfig:
    mode: str = "low-intensity"  # or "patch"
    epsilon: float = 0.01
    steps: int = 1000
    step_fraction: float = 0.1  # low-intensity step size = epsilon * step_fraction
    patch_step: float = 0.05
    momentum_mu: float = 0.9
    attacked_views: list[int] | None = None  # None = all views
    patch_size: int = 10
    k_samples: int = 16
    seed: int = 0
    success_threshold: float = 0.015
    metric: str = "pixel-rgb"

    def __post_init__(self):
        if self.mode not in ("low-intensity", "patch"):
            raise ContractError(f"unknown attack mode {self.mode!r}")
        if self.epsilon < 0:
            raise ContractError("epsilon must be >= 0")
        if self.steps < 0:
            raise ContractError("steps must be >= 0")
        if not 0.0 <= self.momentum_mu < 1.0:
            raise ContractError("momentum_mu must lie in [0,1)")
        if self.patch_size < 0:
            raise ContractError("patch_size must be >= 0")

    def mask_for(self, n_views: int) -> np.ndarray:
        if self.attacked_views is None:
            return np.ones(n_views, dtype=bool)
        mask = np.zeros(n_views, dtype=bool)
        for i in self.attacked_views:
            if not 0 <= i < n_views:
                raise ContractError(f"attacked view index {i} out of range for {n_views} views")
            mask[i] = True
        return mask


@dataclass
class AttackResult:
    adv_views: list[np.ndarray]  # best-iterate adversarial source images
    loss_curve: list[float]  # J at iterates 0..steps
    best_distance_curve: list[float]  # running best avg-L2, non-increasing
    final_distance: float
    success: bool
    wall_time: float
    mode: str
    attacked_views: list[int]

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "attacked_views": self.attacked_views,
            "loss_curve": self.loss_curve,
            "best_distance_curve": self.best_distance_curve,
            "final_distance": self.final_distance,
            "success": self.success,
            "wall_time": self.wall_time,
        }


def avg_l2_distance(a: np.ndarray, b: np.ndarray, metric: str = "pixel-rgb") -> float:
    """Attack-quality metric between two [3,H,W] images in [0,1].

    "pixel-rgb" (default): mean over pixels of the per-pixel RGB
    euclidean distance.  "per-channel": mean absolute difference over
    every value.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    if metric == "pixel-rgb":
        return float(np.mean(np.sqrt(np.sum((a - b) ** 2, axis=0))))
    if metric == "per-channel":
        return float(np.mean(np.abs(a - b)))
    raise ContractError(f"unknown metric {metric!r}")


def mifgsm_step(grad: np.ndarray, momentum: np.ndarray, mu: float,
                step_size: float) -> tuple[np.ndarray, np.ndarray]:
    """One momentum-iterative sign step (targeted: descend the loss).

    g <- mu*g + grad / mean|grad| (zero-guarded); delta = -step_size * sign(g).
    With mu=0 this reduces to a plain targeted sign step.
    """
    if grad.shape != momentum.shape:
        raise DimensionError(f"gradient and momentum shapes differ: {grad.shape} vs {momentum.shape}")
    norm = np.mean(np.abs(grad)) + 1e-12
    new_momentum = mu * momentum + grad / norm
    delta = -step_size * np.sign(new_momentum)
    return delta, new_momentum


def attack_loss(params: RendererParams, adv_views: list, target_pose, target_intr,
                edited_target, config: RenderConfig) -> Tensor:
    """J = MSE(render_image(adv views), edited target); differentiable to pixels."""
    target = edited_target.data if isinstance(edited_target, Tensor) else np.asarray(edited_target)
    rendered = render_image(params, adv_views, target_pose, target_intr, config)
    if rendered.shape != target.shape:
        raise DimensionError(f"target shape {target.shape} does not match render {rendered.shape}")
    diff = rendered - Tensor(target)
    return ad.tmean(diff * diff)


class AttackEngine:
    """Per-run state: frozen params, fixed geometry, cached constant views.

    loss_and_grad() returns J, the rendered image, and dJ/dpixels for the
    attacked views only; everything it caches depends solely on camera
    geometry and the frozen views, never on the attacked pixel values.
    """

    def __init__(self, params: RendererParams, dataset: MultiViewDataset,
                 edited_target: np.ndarray, attacked_mask: np.ndarray,
                 render_config: RenderConfig):
        params.set_requires_grad(False)
        self.params = params
        self.views = dataset.source_views
        self.mask = attacked_mask
        self.target_view = dataset.target_views[0]
        self.edited = np.asarray(edited_target, dtype=np.float64)
        intr = self.target_view.intrinsics
        if self.edited.shape != (3, intr.height, intr.width):
            raise DimensionError(f"edited target is {self.edited.shape}, "
                                 f"camera wants (3, {intr.height}, {intr.width})")
        self.rc = render_config
        self.plan = build_ray_plan(self.target_view.pose, intr, self.views, render_config)
        chunk = max(1, render_config.chunk_rays)
        self.chunks = []
        for lo in range(0, self.plan.n_rays, chunk):
            hi = min(lo + chunk, self.plan.n_rays)
            self.chunks.append((lo, hi, self.plan.chunk(lo, hi)))
        self.attacked = [i for i in range(len(self.views)) if attacked_mask[i]]
        frozen = [i for i in range(len(self.views)) if not attacked_mask[i]]
        # frozen views never change: encode, gather and pool them once
        self.const_moments: list[tuple[np.ndarray, np.ndarray] | None]
        if frozen:
            stack = Tensor(np.stack([self.views[i].image for i in frozen]))
            fmaps = encode_views_stacked(params, stack)
            self.const_moments = []
            for _, _, cp in self.chunks:
                entries = [cp.view_plans[i] for i in frozen]
                g = ad.multi_view_gather(fmaps, entries).data
                self.const_moments.append((g.sum(axis=0), np.einsum("vcp,vcp->cp", g, g)))
        else:
            self.const_moments = [None] * len(self.chunks)
        self.n_values = float(self.edited.size)
        self.truth_flat = self.edited.reshape(3, -1).T  # [HW,3]

    def loss_and_grad(self, adv_images: list[np.ndarray], need_grad: bool = True):
        """Evaluate J at the given source images.

        Returns (J, rendered [3,H,W], grads) where grads[i] is dJ/dimage
        for attacked views and None elsewhere.
        """
        attacked = self.attacked
        enc_tape = Tape() if need_grad else None
        image_stack = leaf = fmaps = None
        if attacked:
            stack_data = np.stack([adv_images[i] for i in attacked])
            if need_grad:
                with enc_tape:
                    image_stack = Tensor(stack_data, requires_grad=True)
                    fmaps = encode_views_stacked(self.params, image_stack)
                leaf = Tensor(fmaps.data, requires_grad=True)
            else:
                leaf = encode_views_stacked(self.params, Tensor(stack_data))

        rendered = np.empty((self.plan.n_rays, 3))
        total_sq = 0.0
        for ci, (lo, hi, cplan) in enumerate(self.chunks):
            truth = self.truth_flat[lo:hi]  # [n,3]
            if need_grad:
                with Tape() as chunk_tape:
                    rgb, _ = render_chunk(self.params, leaf, cplan,
                                          stack_view_indices=attacked,
                                          const_moments=self.const_moments[ci])
                    diff = rgb - Tensor(truth)
                    ssq = ad.tsum(diff * diff)
                    chunk_tape.accumulate([(ssq, np.asarray(1.0 / self.n_values))])
            else:
                rgb, _ = render_chunk(self.params, leaf, cplan,
                                      stack_view_indices=attacked,
                                      const_moments=self.const_moments[ci])
                diff = rgb - Tensor(truth)
                ssq = ad.tsum(diff * diff)
            rendered[lo:hi] = rgb.data
            total_sq += float(ssq.data)

        j = total_sq / self.n_values
        image = rendered.T.reshape(self.edited.shape)
        grads: list[np.ndarray | None] = [None] * len(self.views)
        if need_grad and attacked:
            if leaf.grad is not None:
                enc_tape.accumulate([(fmaps, leaf.grad)])
            else:
                enc_tape.accumulate([(fmaps, np.zeros_like(fmaps.data))])
            for row, i in enumerate(attacked):
                grads[i] = image_stack.grad[row]
        return j, image, grads


def low_intensity_attack(params: RendererParams, dataset: MultiViewDataset,
                         edited_target: np.ndarray, config: AttackConfig) -> AttackResult:
    """Momentum-iterative sign attack on all pixels of the attacked views.

    After every step the attacked images are projected onto the L-inf
    ball of radius epsilon around the originals and clipped to [0,1];
    non-attacked views are returned bit-identical.  The reported result
    is the best iterate by avg-L2 distance to the edited target.
    """
    if config.mode != "low-intensity":
        raise ContractError(f"config mode is {config.mode!r}, expected 'low-intensity'")
    mask = config.mask_for(dataset.n_views)
    if config.steps > 0 and not mask.any():
        raise ContractError("steps > 0 but no view is attacked")
    rc = RenderConfig(near=dataset.near, far=dataset.far, k_samples=config.k_samples,
                      mode="stratified", seed=config.seed)
    engine = AttackEngine(params, dataset, edited_target, mask, rc)
    originals = [sv.image for sv in dataset.source_views]
    adv = [img.copy() if mask[i] else img for i, img in enumerate(originals)]
    momenta = {i: np.zeros_like(originals[i]) for i in range(dataset.n_views) if mask[i]}
    step_size = config.epsilon * config.step_fraction

    t0 = time.time()
    loss_curve: list[float] = []
    best_curve: list[float] = []
    best = np.inf
    best_adv = [a.copy() for a in adv]
    for _ in range(config.steps):
        j, image, grads = engine.loss_and_grad(adv)
        dist = avg_l2_distance(image, edited_target, config.metric)
        loss_curve.append(j)
        if dist < best:
            best = dist
            best_adv = [a.copy() if mask[i] else a for i, a in enumerate(adv)]
        best_curve.append(best)
        for i in momenta:
            delta, momenta[i] = mifgsm_step(grads[i], momenta[i], config.momentum_mu, step_size)
            stepped = adv[i] + delta
            lo = originals[i] - config.epsilon
            hi = originals[i] + config.epsilon
            adv[i] = np.clip(np.clip(stepped, lo, hi), 0.0, 1.0)
    j, image, _ = engine.loss_and_grad(adv, need_grad=False)
    dist = avg_l2_distance(image, edited_target, config.metric)
    loss_curve.append(j)
    if dist < best:
        best = dist
        best_adv = [a.copy() if mask[i] else a for i, a in enumerate(adv)]
    best_curve.append(best)

    return AttackResult(
        adv_views=best_adv,
        loss_curve=loss_curve,
        best_distance_curve=best_curve,
        final_distance=best,
        success=best < config.success_threshold,
        wall_time=time.time() - t0,
        mode=config.mode,
        attacked_views=[int(i) for i in np.flatnonzero(mask)],
    )


def patch_footprint(height: int, width: int, size: int) -> tuple[int, int]:
    """Top-left corner of the centered size x size patch (rounded down)."""
    return (height - size) // 2, (width - size) // 2


def patch_attack(params: RendererParams, dataset: MultiViewDataset,
                 edited_target: np.ndarray, config: AttackConfig) -> AttackResult:
    """Optimize a centered patch per attacked view, each independently.

    Patch pixels start at 0.5 gray and move by momentum sign steps,
    clipped to [0,1] only; every pixel outside the footprints stays
    bit-identical to the original.
    """
    if config.mode != "patch":
        raise ContractError(f"config mode is {config.mode!r}, expected 'patch'")
    mask = config.mask_for(dataset.n_views)
    if config.steps > 0 and not mask.any():
        raise ContractError("steps > 0 but no view is attacked")
    h = dataset.source_views[0].intrinsics.height
    w = dataset.source_views[0].intrinsics.width
    s = config.patch_size
    if s > min(h, w):
        raise ContractError(f"patch size {s} exceeds image {w}x{h}")
    fy, fx = patch_footprint(h, w, s)
    rc = RenderConfig(near=dataset.near, far=dataset.far, k_samples=config.k_samples,
                      mode="stratified", seed=config.seed)
    engine = AttackEngine(params, dataset, edited_target, mask, rc)
    originals = [sv.image for sv in dataset.source_views]
    adv = []
    for i, img in enumerate(originals):
        if mask[i] and s > 0:
            out = img.copy()
            out[:, fy:fy + s, fx:fx + s] = 0.5
            adv.append(out)
        else:
            adv.append(img)
    momenta = {i: np.zeros((3, s, s)) for i in range(dataset.n_views) if mask[i]}

    t0 = time.time()
    loss_curve: list[float] = []
    best_curve: list[float] = []
    best = np.inf
    best_adv = [a.copy() if mask[i] else a for i, a in enumerate(adv)]
    for _ in range(config.steps):
        j, image, grads = engine.loss_and_grad(adv, need_grad=s > 0)
        dist = avg_l2_distance(image, edited_target, config.metric)
        loss_curve.append(j)
        if dist < best:
            best = dist
            best_adv = [a.copy() if mask[i] else a for i, a in enumerate(adv)]
        best_curve.append(best)
        if s == 0:
            continue
        for i in momenta:
            gpatch = grads[i][:, fy:fy + s, fx:fx + s]
            delta, momenta[i] = mifgsm_step(gpatch, momenta[i], config.momentum_mu,
                                            config.patch_step)
            patch = np.clip(adv[i][:, fy:fy + s, fx:fx + s] + delta, 0.0, 1.0)
            out = adv[i].copy()
            out[:, fy:fy + s, fx:fx + s] = patch
            adv[i] = out
    j, image, _ = engine.loss_and_grad(adv, need_grad=False)
    dist = avg_l2_distance(image, edited_target, config.metric)
    loss_curve.append(j)
    if dist < best:
        best = dist
        best_adv = [a.copy() if mask[i] else a for i, a in enumerate(adv)]
    best_curve.append(best)

    return AttackResult(
        adv_views=best_adv,
        loss_curve=loss_curve,
        best_distance_curve=best_curve,
        final_distance=best,
        success=best < config.success_threshold,
        wall_time=time.time() - t0,
        mode=config.mode,
        attacked_views=[int(i) for i in np.flatnonzero(mask)],
    )


def run_attack(params: RendererParams, dataset: MultiViewDataset,
               edited_target: np.ndarray, config: AttackConfig) -> AttackResult:
    fn = low_intensity_attack if config.mode == "low-intensity" else patch_attack
    return fn(params, dataset, edited_target, config)


def attack_basename(scene: str, mode: str, k: int, size: str, repeat: int) -> str:
    return f"attack_{scene}_{mode}_{k}views_{size}_{repeat}"


def save_attack_result(result: AttackResult, out_dir, scene: str, k: int,
                       size: str, repeat: int, config: AttackConfig) -> Path:
    """Write <base>.json plus one PPM per adversarial view; returns the JSON path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = attack_basename(scene, result.mode, k, size, repeat)
    payload = result.to_json_dict()
    payload["config"] = {
        "mode": config.mode, "epsilon": config.epsilon, "steps": config.steps,
        "step_fraction": config.step_fraction, "patch_step": config.patch_step,
        "momentum_mu": config.momentum_mu, "patch_size": config.patch_size,
        "k_samples": config.k_samples, "seed": config.seed,
        "success_threshold": config.success_threshold, "metric": config.metric,
    }
    views = []
    for i, img in enumerate(result.adv_views):
        fname = f"{base}_v{i:02d}.ppm"
        write_ppm(out_dir / fname, img)
        views.append(fname)
    payload["view_files"] = views
    path = out_dir / f"{base}.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path
