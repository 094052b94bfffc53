"""Scikit-learn style front door: a fit/render renderer estimator and
fit/transform attack estimators, so the lab composes with the usual
tooling (get_params/set_params, clone, pipelines of one's own making).

The functional core lives in renderer/training/attacks; these classes
hold configuration, drive those functions, and expose fitted state via
trailing-underscore attributes.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator

from .attacks import AttackConfig, low_intensity_attack, patch_attack
from .errors import ContractError
from .renderer import RenderConfig, RendererParams, load_checkpoint, render_image
from .scenes import MultiViewDataset, random_scene
from .training import TrainConfig, heldout_psnr, psnr, train
from .validation import check_dataset, check_fitted, check_image


class GeneralizableRenderer(BaseEstimator):
    """Cross-scene neural renderer with a fit/render/score surface.

    fit() trains the encoder, color MLP and ray transformer over
    procedurally generated scenes; render() synthesizes a target view of
    an unseen scene from its source views; score() is held-out PSNR.
    """

    def __init__(self, c_feat=16, d_sigma=16, hidden=64, k_samples=16,
                 n_scenes=200, views_per_scene=10, rays_per_step=256, steps=8000,
                 learning_rate=1e-3, beta1=0.9, beta2=0.999, image_size=48,
                 eval_interval=1000, seed=0):
        self.c_feat = c_feat
        self.d_sigma = d_sigma
        self.hidden = hidden
        self.k_samples = k_samples
        self.n_scenes = n_scenes
        self.views_per_scene = views_per_scene
        self.rays_per_step = rays_per_step
        self.steps = steps
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.image_size = image_size
        self.eval_interval = eval_interval
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            n_scenes=self.n_scenes, views_per_scene=self.views_per_scene,
            rays_per_step=self.rays_per_step, steps=self.steps,
            learning_rate=self.learning_rate, beta1=self.beta1, beta2=self.beta2,
            seed=self.seed, eval_interval=self.eval_interval,
            image_size=self.image_size, k_samples=self.k_samples,
            c_feat=self.c_feat, d_sigma=self.d_sigma, hidden=self.hidden,
        )

    def fit(self, X=None, y=None, checkpoint_path=None, log=None):
        """Train the renderer; X and y are unused (scenes are generated
        from the seed) and accepted for API compatibility."""
        self.params_, self.report_ = train(self._train_config(),
                                           checkpoint_path=checkpoint_path, log=log)
        return self

    @classmethod
    def from_checkpoint(cls, path, **kw) -> "GeneralizableRenderer":
        params = load_checkpoint(path)
        est = cls(c_feat=params.c_feat, d_sigma=params.d_sigma, hidden=params.hidden, **kw)
        est.params_ = params
        est.report_ = None
        return est

    def render_config(self, dataset: MultiViewDataset, seed: int | None = None) -> RenderConfig:
        return RenderConfig(near=dataset.near, far=dataset.far, k_samples=self.k_samples,
                            seed=self.seed if seed is None else seed)

    def render(self, dataset: MultiViewDataset, view_index: int = 0, seed: int | None = None):
        """Render the dataset's target view [view_index] -> [3,H,W] array."""
        check_fitted(self, "params_")
        check_dataset(dataset)
        tv = dataset.target_views[view_index]
        img = render_image(self.params_, dataset.source_views, tv.pose, tv.intrinsics,
                           self.render_config(dataset, seed))
        return img.data

    def predict(self, X):
        """Rendered target view for each dataset in X (sklearn-style alias)."""
        return [self.render(ds) for ds in X]

    def score(self, X, y=None) -> float:
        """Mean PSNR (dB) of rendered vs ground-truth target views."""
        check_fitted(self, "params_")
        vals = []
        for ds in X:
            rendered = self.render(ds)
            vals.append(psnr(rendered, ds.target_views[0].image))
        return float(np.mean(vals))

    def heldout_score(self) -> float:
        check_fitted(self, "params_")
        return heldout_psnr(self.params_, self._train_config())


class _BaseAttack(BaseEstimator):
    """Shared plumbing of the two attack estimators: fit(X=dataset,
    y=edited target image) optimizes the perturbation; transform swaps
    the adversarial views into a dataset copy."""

    _mode = "low-intensity"

    def _attack_config(self, n_views: int) -> AttackConfig:
        raise NotImplementedError

    def _renderer_params(self) -> RendererParams:
        r = self.renderer
        if r is None:
            raise ContractError("attack needs a renderer (fitted estimator or RendererParams)")
        if isinstance(r, GeneralizableRenderer):
            check_fitted(r, "params_")
            return r.params_
        if isinstance(r, RendererParams):
            return r
        raise ContractError(f"unsupported renderer of type {type(r).__name__}")

    def fit(self, X: MultiViewDataset, y):
        """Optimize adversarial source views of X toward target image y."""
        dataset = check_dataset(X)
        target = check_image(y, "edited target")
        config = self._attack_config(dataset.n_views)
        fn = low_intensity_attack if config.mode == "low-intensity" else patch_attack
        self.result_ = fn(self._renderer_params(), dataset, target, config)
        self.views_ = self.result_.adv_views
        self.loss_curve_ = self.result_.loss_curve
        self.distance_ = self.result_.final_distance
        self.success_ = self.result_.success
        return self

    def transform(self, X: MultiViewDataset) -> MultiViewDataset:
        """Dataset with the fitted adversarial views swapped in."""
        check_fitted(self, "result_")
        dataset = check_dataset(X)
        if len(dataset.source_views) != len(self.views_):
            raise ContractError(f"dataset has {len(dataset.source_views)} views, "
                                f"attack was fitted on {len(self.views_)}")
        swapped = [replace(sv, image=img) for sv, img in zip(dataset.source_views, self.views_)]
        return replace(dataset, source_views=swapped)

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y).transform(X)


class LowIntensityAttack(_BaseAttack):
    """Momentum-iterative sign attack under an L-inf budget epsilon."""

    def __init__(self, renderer=None, epsilon=0.01, steps=1000, step_fraction=0.1,
                 momentum_mu=0.9, attacked_views=None, k_samples=16,
                 success_threshold=0.015, metric="pixel-rgb", seed=0):
        self.renderer = renderer
        self.epsilon = epsilon
        self.steps = steps
        self.step_fraction = step_fraction
        self.momentum_mu = momentum_mu
        self.attacked_views = attacked_views
        self.k_samples = k_samples
        self.success_threshold = success_threshold
        self.metric = metric
        self.seed = seed

    def _attack_config(self, n_views: int) -> AttackConfig:
        return AttackConfig(
            mode="low-intensity", epsilon=self.epsilon, steps=self.steps,
            step_fraction=self.step_fraction, momentum_mu=self.momentum_mu,
            attacked_views=self.attacked_views, k_samples=self.k_samples,
            seed=self.seed, success_threshold=self.success_threshold, metric=self.metric,
        )


class PatchAttack(_BaseAttack):
    """Centered per-view square patches, intensity bounded only by [0,1]."""

    def __init__(self, renderer=None, patch_size=10, steps=1000, patch_step=0.05,
                 momentum_mu=0.9, attacked_views=None, k_samples=16,
                 success_threshold=0.015, metric="pixel-rgb", seed=0):
        self.renderer = renderer
        self.patch_size = patch_size
        self.steps = steps
        self.patch_step = patch_step
        self.momentum_mu = momentum_mu
        self.attacked_views = attacked_views
        self.k_samples = k_samples
        self.success_threshold = success_threshold
        self.metric = metric
        self.seed = seed

    def _attack_config(self, n_views: int) -> AttackConfig:
        return AttackConfig(
            mode="patch", patch_size=self.patch_size, steps=self.steps,
            patch_step=self.patch_step, momentum_mu=self.momentum_mu,
            attacked_views=self.attacked_views, k_samples=self.k_samples,
            seed=self.seed, success_threshold=self.success_threshold, metric=self.metric,
        )


def demo_dataset(seed: int = 0, n_views: int = 10, image_size: int = 48) -> MultiViewDataset:
    """Convenience builder for a random synthetic scene dataset."""
    from .scenes import make_dataset

    scene = random_scene(seed, n_primitives=3)
    return make_dataset(scene, n_views, height=image_size, width=image_size, seed=seed)
