"""Training loop: fit the renderer across many random synthetic scenes so
it generalizes to unseen ones (the property the attacks exploit)."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .cameras import rays_for_camera
from .errors import ContractError, DimensionError, TrainingDiverged
from .renderer import (
    RenderConfig,
    RendererParams,
    build_ray_plan,
    encode_views_stacked,
    render_chunk,
    render_image,
    save_checkpoint,
)
from .scenes import make_dataset, random_scene

PSNR_CAP_DB = 99.0


def mse_loss(rendered: Tensor, truth: Tensor) -> Tensor:
    """Mean over all elements of the squared difference."""
    rendered = rendered if isinstance(rendered, Tensor) else Tensor(rendered)
    truth = truth if isinstance(truth, Tensor) else Tensor(truth)
    if rendered.shape != truth.shape:
        raise DimensionError(f"mse shapes differ: {rendered.shape} vs {truth.shape}")
    diff = rendered - truth
    return ad.tmean(diff * diff)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) for [0,1] images; identical images cap at 99 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


@dataclass
class TrainConfig:
    n_scenes: int = 200
    views_per_scene: int = 10
    rays_per_step: int = 256
    steps: int = 8000
    learning_rate: float = 1e-3
    lr_final: float | None = None  # cosine-decay to this over the run
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    eval_interval: int = 1000
    n_eval_scenes: int = 3
    image_size: int = 48
    k_samples: int = 16
    rig_radius: float = 4.0
    c_feat: int = 16
    d_sigma: int = 16
    hidden: int = 64

    def __post_init__(self):
        if min(self.n_scenes, self.views_per_scene, self.rays_per_step, self.eval_interval) < 1:
            raise ContractError("all counts must be >= 1")
        if self.steps < 0:
            raise ContractError("steps must be >= 0")
        if self.learning_rate <= 0:
            raise ContractError("learning rate must be positive")


@dataclass
class TrainReport:
    loss_curve: list[float] = field(default_factory=list)
    psnr_curve: list[tuple[int, float]] = field(default_factory=list)  # (step, held-out dB)
    checkpoint_path: str | None = None
    wall_time: float = 0.0

    def final_psnr(self) -> float:
        return self.psnr_curve[-1][1] if self.psnr_curve else float("nan")

    def to_json(self) -> str:
        return json.dumps({
            "loss_curve": self.loss_curve,
            "psnr_curve": self.psnr_curve,
            "checkpoint_path": self.checkpoint_path,
            "wall_time": self.wall_time,
        })


class Adam:
    """Adaptive-moment gradient descent over a named tensor dict."""

    def __init__(self, tensors: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.tensors = tensors
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(t.data) for k, t in tensors.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in tensors.items()}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, tensor in self.tensors.items():
            g = tensor.grad
            if g is None:
                continue
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            tensor.data = tensor.data - self.lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)

    def zero_grad(self) -> None:
        for tensor in self.tensors.values():
            tensor.grad = None


def _scene_pool(config: TrainConfig, base_seed: int, count: int, offset: int):
    """Datasets are built lazily and memoized; generation is deterministic."""
    cache: dict[int, object] = {}

    def get(i: int):
        if i not in cache:
            scene = random_scene(base_seed + offset + i, n_primitives=3)
            cache[i] = make_dataset(scene, config.views_per_scene, rig_radius=config.rig_radius,
                                    height=config.image_size, width=config.image_size,
                                    seed=base_seed + offset + i)
        return cache[i]

    return get


def heldout_psnr(params: RendererParams, config: TrainConfig, n_scenes: int | None = None) -> float:
    """Mean PSNR of rendered vs oracle target views on held-out scenes."""
    get = _scene_pool(config, config.seed, config.n_eval_scenes, offset=10_000_000)
    vals = []
    for i in range(n_scenes or config.n_eval_scenes):
        ds = get(i)
        target = ds.target_views[0]
        rc = RenderConfig(near=ds.near, far=ds.far, k_samples=config.k_samples,
                          mode="stratified", seed=1234 + i)
        img = render_image(params, ds.source_views, target.pose, target.intrinsics, rc)
        vals.append(psnr(img.data, target.image))
    return float(np.mean(vals))


def train(config: TrainConfig, checkpoint_path=None, params: RendererParams | None = None,
          log=None) -> tuple[RendererParams, TrainReport]:
    """Minimize MSE between rendered and oracle ray colors over random scenes.

    Each step draws one training scene and a batch of its target-view
    rays.  Deterministic for a fixed seed.  Raises TrainingDiverged when
    the loss goes non-finite.
    """
    t0 = time.time()
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = RendererParams(c_feat=config.c_feat, d_sigma=config.d_sigma,
                                hidden=config.hidden, seed=config.seed)
    params.set_requires_grad(True)
    opt = Adam(params.tensors, lr=config.learning_rate, beta1=config.beta1,
               beta2=config.beta2, eps=config.eps)
    get_scene = _scene_pool(config, config.seed, config.n_scenes, offset=0)
    report = TrainReport()

    for step in range(config.steps):
        ds = get_scene(int(rng.integers(config.n_scenes)))
        target = ds.target_views[0]
        h, w = target.intrinsics.height, target.intrinsics.width
        ray_idx = rng.choice(h * w, size=min(config.rays_per_step, h * w), replace=False)
        rc = RenderConfig(near=ds.near, far=ds.far, k_samples=config.k_samples,
                          mode="stratified", seed=int(rng.integers(2**31)))
        all_o, all_d = rays_for_camera(target.pose, target.intrinsics)
        plan = build_ray_plan(target.pose, target.intrinsics, ds.source_views, rc,
                              rays=(all_o[ray_idx], all_d[ray_idx]))
        truth = target.image.reshape(3, -1)[:, ray_idx].T  # [B,3]

        opt.zero_grad()
        with Tape() as tape:
            stack = Tensor(np.stack([sv.image for sv in ds.source_views]))
            fmap_stack = encode_views_stacked(params, stack)
            rgb, _ = render_chunk(params, fmap_stack, plan)
            loss = mse_loss(rgb, Tensor(truth))
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise TrainingDiverged(f"loss became {loss_val} at step {step}")
            tape.backward(loss)
        if config.lr_final is not None and config.steps > 1:
            frac = step / (config.steps - 1)
            opt.lr = config.lr_final + 0.5 * (config.learning_rate - config.lr_final) * (
                1.0 + np.cos(np.pi * frac))
        opt.step()
        report.loss_curve.append(loss_val)

        if (step + 1) % config.eval_interval == 0 or step + 1 == config.steps:
            params.set_requires_grad(False)
            db = heldout_psnr(params, config)
            params.set_requires_grad(True)
            report.psnr_curve.append((step + 1, db))
            if log:
                log(f"step {step + 1}/{config.steps} loss {loss_val:.5f} held-out PSNR {db:.2f} dB")

    params.set_requires_grad(False)
    if config.steps == 0:
        report.psnr_curve = []
    if checkpoint_path is not None:
        save_checkpoint(params, checkpoint_path)
        report.checkpoint_path = str(checkpoint_path)
    report.wall_time = time.time() - t0
    return params, report
