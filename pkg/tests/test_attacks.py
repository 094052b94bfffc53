import numpy as np
import pytest

from advrf import autodiff as ad
from advrf.autodiff import Tape, Tensor
from advrf.attacks import (
    AttackConfig,
    AttackEngine,
    attack_loss,
    avg_l2_distance,
    low_intensity_attack,
    mifgsm_step,
    patch_attack,
    patch_footprint,
    save_attack_result,
)
from advrf.errors import ContractError, DimensionError
from advrf.renderer import RenderConfig
from advrf.scenes import make_dataset, random_scene

from helpers import loop_avg_l2, scalar_momentum_sign_descent

RNG = np.random.default_rng(4)


def edited_target_for(ds, shift=0.15):
    img = ds.target_views[0].image.copy()
    h, w = img.shape[1:]
    img[:, h // 3:2 * h // 3, w // 3:2 * w // 3] = np.clip(
        img[:, h // 3:2 * h // 3, w // 3:2 * w // 3] + shift, 0, 1)
    return img


@pytest.fixture()
def attack_setup(tiny_trained):
    params, _ = tiny_trained
    ds = make_dataset(random_scene(31, 3), 4, height=12, width=12, seed=31)
    return params, ds, edited_target_for(ds)


# -- metric -----------------------------------------------------------------------

def test_avg_l2_identical_zero():
    x = RNG.uniform(0, 1, (3, 6, 6))
    assert avg_l2_distance(x, x.copy()) == 0.0


def test_avg_l2_uniform_offset_analytic():
    a = np.zeros((3, 8, 8))
    b = np.full_like(a, 0.015)
    expected = 0.015 * np.sqrt(3.0)
    assert abs(avg_l2_distance(a, b) - expected) < 1e-12
    assert abs(avg_l2_distance(a, b) - 0.025981) < 1e-6


def test_avg_l2_matches_loop_reference():
    for _ in range(20):
        a = RNG.uniform(0, 1, (3, 5, 7))
        b = RNG.uniform(0, 1, (3, 5, 7))
        assert abs(avg_l2_distance(a, b) - loop_avg_l2(a, b)) < 1e-15


def test_avg_l2_per_channel_mode():
    a = np.zeros((3, 4, 4))
    b = np.full_like(a, 0.25)
    assert abs(avg_l2_distance(a, b, metric="per-channel") - 0.25) < 1e-15


def test_avg_l2_shape_mismatch():
    with pytest.raises(DimensionError):
        avg_l2_distance(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


# -- mifgsm step --------------------------------------------------------------------

def test_mifgsm_mu_zero_is_plain_sign_step():
    for _ in range(1000):
        grad = RNG.normal(size=(3, 4, 4)) * 10 ** RNG.uniform(-6, 2)
        delta, g = mifgsm_step(grad, np.zeros_like(grad), mu=0.0, step_size=0.001)
        expected = -0.001 * np.sign(grad)
        assert np.array_equal(delta, expected)


def test_mifgsm_zero_gradient_zero_delta():
    z = np.zeros((2, 3, 3))
    delta, g = mifgsm_step(z, z.copy(), mu=0.9, step_size=0.01)
    assert np.all(delta == 0.0)
    assert np.all(g == 0.0)


def test_mifgsm_momentum_accumulates():
    grad = np.ones((2, 2))
    g = np.zeros_like(grad)
    _, g = mifgsm_step(grad, g, mu=0.9, step_size=0.1)
    _, g2 = mifgsm_step(grad, g, mu=0.9, step_size=0.1)
    assert np.all(g2 > g)  # mu*g + normalized grad keeps growing


def test_mifgsm_matches_scalar_simulation():
    # quadratic J=(x-3)^2 from x0=0: the sign-momentum iteration lands in
    # the band [3 - step, 3 + step]
    x, g = 0.0, 0.0
    mu, step = 0.9, 0.1
    for _ in range(50):
        grad = np.array([2.0 * (x - 3.0)])
        delta, gnew = mifgsm_step(grad, np.array([g]), mu, step)
        x += float(delta[0])
        g = float(gnew[0])
    assert 3.0 - 0.1 <= x <= 3.0 + 0.1
    ref = scalar_momentum_sign_descent(0.0, 3.0, mu, step, 50)
    assert abs(x - ref) < 1e-12


# -- attack_loss ----------------------------------------------------------------------

def test_attack_loss_zero_when_target_equals_render(attack_setup):
    params, ds, _ = attack_setup
    rc = RenderConfig(near=ds.near, far=ds.far, k_samples=6, seed=7)
    tv = ds.target_views[0]
    from advrf.renderer import render_image

    current = render_image(params, ds.source_views, tv.pose, tv.intrinsics, rc).data
    j = attack_loss(params, ds.source_views, tv.pose, tv.intrinsics, current, rc)
    assert j.item() == 0.0


def test_attack_loss_uniform_offset(attack_setup):
    params, ds, _ = attack_setup
    rc = RenderConfig(near=ds.near, far=ds.far, k_samples=6, seed=7)
    tv = ds.target_views[0]
    from advrf.renderer import render_image

    current = render_image(params, ds.source_views, tv.pose, tv.intrinsics, rc).data
    j = attack_loss(params, ds.source_views, tv.pose, tv.intrinsics,
                    np.clip(current, 0, 0.9) + 0.1, rc)
    assert abs(j.item() - 0.01) < 1e-3  # clip rarely binds on this scene


def test_attack_loss_shape_mismatch(attack_setup):
    params, ds, _ = attack_setup
    rc = RenderConfig(near=ds.near, far=ds.far, k_samples=4, seed=7)
    tv = ds.target_views[0]
    with pytest.raises(DimensionError):
        attack_loss(params, ds.source_views, tv.pose, tv.intrinsics,
                    np.zeros((3, 5, 5)), rc)


def test_engine_matches_single_tape_attack_loss(attack_setup):
    from dataclasses import replace

    params, ds, target = attack_setup
    rc = RenderConfig(near=ds.near, far=ds.far, k_samples=6, seed=7)
    tv = ds.target_views[0]
    eng = AttackEngine(params, ds, target, np.ones(4, bool), rc)
    adv = [sv.image.copy() for sv in ds.source_views]
    j, image, grads = eng.loss_and_grad(adv)

    params.set_requires_grad(False)
    with Tape() as tape:
        advt = [Tensor(a.copy(), requires_grad=True) for a in adv]
        views = [replace(sv, image=t) for sv, t in zip(ds.source_views, advt)]
        j2 = attack_loss(params, views, tv.pose, tv.intrinsics, target, rc)
        tape.backward(j2)
    assert abs(j - j2.item()) < 1e-12
    for i in range(4):
        assert np.max(np.abs(grads[i] - advt[i].grad)) < 1e-12


def test_engine_gradient_matches_finite_differences(attack_setup):
    params, ds, target = attack_setup
    rc = RenderConfig(near=ds.near, far=ds.far, k_samples=4, seed=3)
    eng = AttackEngine(params, ds, target, np.array([True, False, True, False]), rc)
    adv = [sv.image.copy() for sv in ds.source_views]
    j, _, grads = eng.loss_and_grad(adv)
    h = 1e-4
    rng = np.random.default_rng(5)
    for _ in range(6):
        vi = int(rng.choice([0, 2]))
        c, y, x = rng.integers(3), rng.integers(12), rng.integers(12)
        up = [a.copy() for a in adv]
        dn = [a.copy() for a in adv]
        up[vi][c, y, x] += h
        dn[vi][c, y, x] -= h
        jp, _, _ = eng.loss_and_grad(up, need_grad=False)
        jm, _, _ = eng.loss_and_grad(dn, need_grad=False)
        fd = (jp - jm) / (2 * h)
        assert abs(grads[vi][c, y, x] - fd) / (abs(grads[vi][c, y, x]) + 1e-8) < 1e-3


# -- low-intensity attack ---------------------------------------------------------------

def test_zero_steps_returns_originals(attack_setup):
    params, ds, target = attack_setup
    cfg = AttackConfig(mode="low-intensity", steps=0, k_samples=4, seed=1)
    res = low_intensity_attack(params, ds, target, cfg)
    for sv, adv in zip(ds.source_views, res.adv_views):
        assert np.array_equal(sv.image, adv)
    assert len(res.loss_curve) == 1
    assert res.final_distance == res.best_distance_curve[0]


def test_zero_epsilon_keeps_originals(attack_setup):
    params, ds, target = attack_setup
    cfg = AttackConfig(mode="low-intensity", epsilon=0.0, steps=4, k_samples=4, seed=1)
    res = low_intensity_attack(params, ds, target, cfg)
    for sv, adv in zip(ds.source_views, res.adv_views):
        assert np.array_equal(sv.image, adv)


def test_low_intensity_respects_budget_and_untouched_views(attack_setup):
    params, ds, target = attack_setup
    eps = 0.02
    cfg = AttackConfig(mode="low-intensity", epsilon=eps, steps=25, k_samples=4,
                       attacked_views=[0, 2], seed=3)
    res = low_intensity_attack(params, ds, target, cfg)
    for i, (sv, adv) in enumerate(zip(ds.source_views, res.adv_views)):
        if i in (0, 2):
            assert np.max(np.abs(adv - sv.image)) <= eps + 1e-12
            assert adv.min() >= 0.0 and adv.max() <= 1.0
            assert not np.array_equal(adv, sv.image)  # it actually moved
        else:
            assert adv is sv.image or np.array_equal(adv, sv.image)


def test_low_intensity_loss_curve_and_best_iterate(attack_setup):
    params, ds, target = attack_setup
    cfg = AttackConfig(mode="low-intensity", epsilon=0.05, steps=30, k_samples=4, seed=2)
    res = low_intensity_attack(params, ds, target, cfg)
    assert len(res.loss_curve) == 31
    assert len(res.best_distance_curve) == 31
    assert all(b <= a + 1e-15 for a, b in zip(res.best_distance_curve,
                                              res.best_distance_curve[1:]))
    assert res.final_distance == res.best_distance_curve[-1]
    # attack made progress against the baseline
    assert res.final_distance < res.best_distance_curve[0]


def test_low_intensity_requires_attacked_view(attack_setup):
    params, ds, target = attack_setup
    cfg = AttackConfig(mode="low-intensity", steps=3, attacked_views=[], k_samples=4)
    with pytest.raises(ContractError):
        low_intensity_attack(params, ds, target, cfg)


def test_attack_deterministic_given_seed(attack_setup):
    params, ds, target = attack_setup
    cfg = AttackConfig(mode="low-intensity", epsilon=0.03, steps=8, k_samples=4, seed=9)
    r1 = low_intensity_attack(params, ds, target, cfg)
    r2 = low_intensity_attack(params, ds, target, cfg)
    assert r1.loss_curve == r2.loss_curve
    for a, b in zip(r1.adv_views, r2.adv_views):
        assert np.array_equal(a, b)


# -- patch attack --------------------------------------------------------------------------

def test_patch_footprint_centered():
    assert patch_footprint(48, 48, 10) == (19, 19)
    assert patch_footprint(12, 12, 5) == (3, 3)


def test_patch_zero_size_changes_nothing(attack_setup):
    params, ds, target = attack_setup
    cfg = AttackConfig(mode="patch", patch_size=0, steps=3, k_samples=4, seed=1)
    res = patch_attack(params, ds, target, cfg)
    for sv, adv in zip(ds.source_views, res.adv_views):
        assert np.array_equal(sv.image, adv)
    assert res.final_distance == res.best_distance_curve[0]


def test_patch_changes_exactly_footprint(attack_setup):
    params, ds, target = attack_setup
    s = 4
    cfg = AttackConfig(mode="patch", patch_size=s, steps=12, k_samples=4,
                       attacked_views=[1, 3], seed=5)
    res = patch_attack(params, ds, target, cfg)
    fy, fx = patch_footprint(12, 12, s)
    for i, (sv, adv) in enumerate(zip(ds.source_views, res.adv_views)):
        diff = adv != sv.image
        if i in (1, 3):
            outside = diff.copy()
            outside[:, fy:fy + s, fx:fx + s] = False
            assert not outside.any()
            assert diff[:, fy:fy + s, fx:fx + s].any()
            assert adv.min() >= 0.0 and adv.max() <= 1.0
        else:
            assert not diff.any()


def test_patch_larger_than_image_rejected(attack_setup):
    params, ds, target = attack_setup
    cfg = AttackConfig(mode="patch", patch_size=13, steps=1, k_samples=4)
    with pytest.raises(ContractError):
        patch_attack(params, ds, target, cfg)


def test_patch_intensities_not_eps_bounded(attack_setup):
    # patches may move arbitrarily far from the original pixels (within [0,1])
    params, ds, target = attack_setup
    cfg = AttackConfig(mode="patch", patch_size=6, steps=40, k_samples=4, seed=4)
    res = patch_attack(params, ds, target, cfg)
    fy, fx = patch_footprint(12, 12, 6)
    deltas = [np.max(np.abs(adv[:, fy:fy + 6, fx:fx + 6] - sv.image[:, fy:fy + 6, fx:fx + 6]))
              for sv, adv in zip(ds.source_views, res.adv_views)]
    assert max(deltas) > 0.2


def test_whole_image_patch_dominates_low_intensity(attack_setup):
    params, ds, target = attack_setup
    pcfg = AttackConfig(mode="patch", patch_size=12, steps=40, k_samples=4, seed=6)
    lcfg = AttackConfig(mode="low-intensity", epsilon=0.01, steps=40, k_samples=4, seed=6)
    pres = patch_attack(params, ds, target, pcfg)
    lres = low_intensity_attack(params, ds, target, lcfg)
    assert pres.final_distance <= lres.final_distance


def test_monotone_freedom_over_repeats(tiny_trained):
    # enlarging the attacked set (superset mask) does not hurt the mean
    # final distance by more than the 10% seeded-noise tolerance
    params, _ = tiny_trained
    subset_dists, superset_dists = [], []
    for rep in range(10):
        ds = make_dataset(random_scene(300 + rep, 3), 4, height=12, width=12, seed=300 + rep)
        target = np.clip(ds.target_views[0].image + 0.12, 0, 1)
        for views, bucket in (([0, 1], subset_dists), ([0, 1, 2, 3], superset_dists)):
            cfg = AttackConfig(mode="low-intensity", epsilon=0.02, steps=25, k_samples=4,
                               attacked_views=views, seed=rep)
            bucket.append(low_intensity_attack(params, ds, target, cfg).final_distance)
    assert np.mean(superset_dists) <= np.mean(subset_dists) * 1.10


# -- config validation -----------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ContractError):
        AttackConfig(epsilon=-0.1)
    with pytest.raises(ContractError):
        AttackConfig(steps=-1)
    with pytest.raises(ContractError):
        AttackConfig(momentum_mu=1.0)
    with pytest.raises(ContractError):
        AttackConfig(mode="other")
    with pytest.raises(ContractError):
        AttackConfig(attacked_views=[5]).mask_for(3)


def test_result_serialization(tmp_path, attack_setup):
    params, ds, target = attack_setup
    cfg = AttackConfig(mode="low-intensity", epsilon=0.02, steps=2, k_samples=4, seed=0)
    res = low_intensity_attack(params, ds, target, cfg)
    path = save_attack_result(res, tmp_path, "scene31", 4, "eps0.02", 0, cfg)
    import json

    payload = json.loads(path.read_text())
    assert payload["final_distance"] == res.final_distance
    assert len(payload["view_files"]) == 4
    for fname in payload["view_files"]:
        assert (tmp_path / fname).is_file()
    assert path.name == "attack_scene31_low-intensity_4views_eps0.02_0.json"
