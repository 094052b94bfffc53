"""advrf: a desk-scale lab for targeted adversarial attacks on a
generalizable neural renderer.

Train a small cross-scene image-based renderer on synthetic scenes, then
drive its rendered output toward edited targets by perturbing the source
views, either everywhere under an L-inf budget or inside unbounded
centered patches.
"""

from .attacks import (
    AttackConfig,
    AttackResult,
    attack_loss,
    avg_l2_distance,
    low_intensity_attack,
    mifgsm_step,
    patch_attack,
)
from .autodiff import Tape, Tensor, check_gradients
from .cameras import CameraPose, Intrinsics, Ray, bilinear_sample, project, ray_through_pixel, sample_depths
from .estimators import GeneralizableRenderer, LowIntensityAttack, PatchAttack, demo_dataset
from .renderer import RenderConfig, RendererParams, load_checkpoint, render_image, save_checkpoint, volume_render
from .scenes import MultiViewDataset, SceneEdit, ScenePrimitive, SceneSpec, apply_edit, make_dataset, oracle_render, random_scene
from .sweeps import SweepResult, SweepSpec, run_patch_sweep, run_views_sweep, write_csv
from .training import TrainConfig, TrainReport, mse_loss, psnr, train

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "AttackResult", "attack_loss", "avg_l2_distance",
    "low_intensity_attack", "mifgsm_step", "patch_attack",
    "Tape", "Tensor", "check_gradients",
    "CameraPose", "Intrinsics", "Ray", "bilinear_sample", "project",
    "ray_through_pixel", "sample_depths",
    "GeneralizableRenderer", "LowIntensityAttack", "PatchAttack", "demo_dataset",
    "RenderConfig", "RendererParams", "load_checkpoint", "render_image",
    "save_checkpoint", "volume_render",
    "MultiViewDataset", "SceneEdit", "ScenePrimitive", "SceneSpec",
    "apply_edit", "make_dataset", "oracle_render", "random_scene",
    "SweepResult", "SweepSpec", "run_patch_sweep", "run_views_sweep", "write_csv",
    "TrainConfig", "TrainReport", "mse_loss", "psnr", "train",
]
