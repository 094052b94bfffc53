import numpy as np
import pytest
from sklearn.base import clone

from advrf.errors import ContractError
from advrf.estimators import GeneralizableRenderer, LowIntensityAttack, PatchAttack, demo_dataset
from advrf.scenes import make_dataset, random_scene

from test_attacks import edited_target_for


@pytest.fixture(scope="module")
def fitted_renderer(tiny_trained):
    params, config = tiny_trained
    est = GeneralizableRenderer(c_feat=params.c_feat, d_sigma=params.d_sigma,
                                hidden=params.hidden, k_samples=8, image_size=24, seed=11)
    est.params_ = params
    est.report_ = None
    return est


@pytest.fixture()
def tiny_ds():
    return make_dataset(random_scene(51, 3), 4, height=12, width=12, seed=51)


# -- sklearn API compliance ------------------------------------------------------

def test_get_params_round_trips():
    est = GeneralizableRenderer(steps=5, seed=7)
    params = est.get_params()
    assert params["steps"] == 5 and params["seed"] == 7
    est2 = GeneralizableRenderer(**params)
    assert est2.get_params() == params


def test_set_params_and_clone():
    est = LowIntensityAttack(epsilon=0.03, steps=9)
    est.set_params(epsilon=0.07)
    assert est.epsilon == 0.07
    dup = clone(est)
    assert dup.get_params() == est.get_params()


def test_clone_drops_fitted_state(fitted_renderer):
    dup = clone(fitted_renderer)
    assert not hasattr(dup, "params_")


# -- renderer estimator ------------------------------------------------------------

def test_fit_trains_and_sets_state():
    est = GeneralizableRenderer(c_feat=8, d_sigma=8, hidden=16, k_samples=4,
                                n_scenes=2, views_per_scene=3, rays_per_step=24,
                                steps=4, image_size=12, eval_interval=4, seed=0)
    out = est.fit()
    assert out is est
    assert est.params_ is not None
    assert len(est.report_.loss_curve) == 4


def test_render_requires_fit(tiny_ds):
    est = GeneralizableRenderer()
    with pytest.raises(ContractError):
        est.render(tiny_ds)


def test_render_and_score(fitted_renderer):
    ds = make_dataset(random_scene(77, 3), 4, height=24, width=24, seed=77)
    img = fitted_renderer.render(ds)
    assert img.shape == (3, 24, 24)
    assert 0.0 <= img.min() and img.max() <= 1.0
    score = fitted_renderer.score([ds])
    assert score > 14.0  # a trained tiny model beats a gray guess


def test_predict_returns_one_image_per_dataset(fitted_renderer):
    dss = [make_dataset(random_scene(s, 2), 3, height=24, width=24, seed=s) for s in (5, 6)]
    outs = fitted_renderer.predict(dss)
    assert len(outs) == 2 and outs[0].shape == (3, 24, 24)


def test_from_checkpoint(tmp_path, tiny_trained):
    from advrf.renderer import save_checkpoint

    params, _ = tiny_trained
    p = tmp_path / "m.bin"
    save_checkpoint(params, p)
    est = GeneralizableRenderer.from_checkpoint(p, k_samples=8)
    assert est.params_.c_feat == params.c_feat


# -- attack estimators ---------------------------------------------------------------

def test_low_intensity_attack_estimator(fitted_renderer, tiny_ds):
    target = edited_target_for(tiny_ds)
    atk = LowIntensityAttack(renderer=fitted_renderer, epsilon=0.02, steps=6,
                             k_samples=4, seed=2)
    atk.fit(tiny_ds, target)
    assert len(atk.views_) == tiny_ds.n_views
    assert len(atk.loss_curve_) == 7
    assert atk.distance_ == atk.result_.final_distance
    for sv, adv in zip(tiny_ds.source_views, atk.views_):
        assert np.max(np.abs(adv - sv.image)) <= 0.02 + 1e-12


def test_attack_transform_swaps_views(fitted_renderer, tiny_ds):
    target = edited_target_for(tiny_ds)
    atk = LowIntensityAttack(renderer=fitted_renderer, epsilon=0.02, steps=3,
                             k_samples=4, seed=2)
    out = atk.fit_transform(tiny_ds, target)
    assert out is not tiny_ds
    for adv, swapped in zip(atk.views_, out.source_views):
        assert np.array_equal(adv, swapped.image)
    # geometry is preserved
    for a, b in zip(tiny_ds.source_views, out.source_views):
        assert np.array_equal(a.pose.rotation, b.pose.rotation)


def test_patch_attack_estimator(fitted_renderer, tiny_ds):
    target = edited_target_for(tiny_ds)
    atk = PatchAttack(renderer=fitted_renderer, patch_size=4, steps=5, k_samples=4, seed=1)
    atk.fit(tiny_ds, target)
    fy = fx = (12 - 4) // 2
    for sv, adv in zip(tiny_ds.source_views, atk.views_):
        outside = adv != sv.image
        outside[:, fy:fy + 4, fx:fx + 4] = False
        assert not outside.any()


def test_attack_requires_renderer(tiny_ds):
    atk = LowIntensityAttack(steps=1)
    with pytest.raises(ContractError):
        atk.fit(tiny_ds, edited_target_for(tiny_ds))


def test_attack_accepts_raw_params(tiny_trained, tiny_ds):
    params, _ = tiny_trained
    atk = LowIntensityAttack(renderer=params, epsilon=0.01, steps=2, k_samples=4)
    atk.fit(tiny_ds, edited_target_for(tiny_ds))
    assert atk.result_ is not None


def test_attack_validates_target_range(fitted_renderer, tiny_ds):
    bad = np.full((3, 12, 12), 1.5)
    atk = LowIntensityAttack(renderer=fitted_renderer, steps=1, k_samples=4)
    with pytest.raises(ContractError):
        atk.fit(tiny_ds, bad)


def test_demo_dataset_builder():
    ds = demo_dataset(seed=4, n_views=3, image_size=16)
    assert ds.n_views == 3
    assert ds.source_views[0].image.shape == (3, 16, 16)
