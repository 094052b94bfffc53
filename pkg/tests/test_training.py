import numpy as np
import pytest

from advrf.autodiff import Tensor
from advrf.errors import ContractError, DimensionError
from advrf.training import Adam, TrainConfig, heldout_psnr, mse_loss, psnr, train

from helpers import loop_mse

RNG = np.random.default_rng(3)


# -- mse ------------------------------------------------------------------------

def test_mse_identical_is_zero():
    x = RNG.uniform(0, 1, (4, 3))
    assert mse_loss(Tensor(x), Tensor(x.copy())).item() == 0.0


def test_mse_constant_offset():
    a = np.zeros((5, 3))
    b = np.full((5, 3), 0.1)
    assert abs(mse_loss(Tensor(a), Tensor(b)).item() - 0.01) < 1e-15


def test_mse_matches_loop_reference():
    for _ in range(20):
        a = RNG.uniform(0, 1, (6, 7))
        b = RNG.uniform(0, 1, (6, 7))
        assert abs(mse_loss(Tensor(a), Tensor(b)).item() - loop_mse(a, b)) < 1e-15


def test_mse_shape_mismatch():
    with pytest.raises(DimensionError):
        mse_loss(Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 3))))


# -- psnr -----------------------------------------------------------------------

def test_psnr_identical_capped():
    x = RNG.uniform(0, 1, (3, 4, 4))
    assert psnr(x, x.copy()) == 99.0


def test_psnr_analytic():
    a = np.zeros((3, 10, 10))
    b = np.full_like(a, 0.1)  # mse = 0.01 -> 20 dB
    assert abs(psnr(a, b) - 20.0) < 1e-12


def test_psnr_symmetry():
    a = RNG.uniform(0, 1, (3, 5, 5))
    b = RNG.uniform(0, 1, (3, 5, 5))
    assert psnr(a, b) == psnr(b, a)


# -- optimizer -------------------------------------------------------------------

def test_adam_reduces_quadratic():
    x = Tensor(np.array([5.0, -3.0]), requires_grad=True)
    opt = Adam({"x": x}, lr=0.1)
    for _ in range(200):
        x.grad = 2.0 * x.data
        opt.step()
    assert np.all(np.abs(x.data) < 0.05)


def test_adam_skips_missing_gradients():
    x = Tensor(np.ones(2), requires_grad=True)
    opt = Adam({"x": x}, lr=0.1)
    x.grad = None
    opt.step()
    assert np.array_equal(x.data, np.ones(2))


# -- train loop ------------------------------------------------------------------

def _fast_config(**kw):
    base = dict(n_scenes=2, views_per_scene=3, rays_per_step=32, steps=5,
                image_size=12, k_samples=4, eval_interval=5, n_eval_scenes=1, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_zero_steps_gives_empty_curve_and_checkpoint(tmp_path):
    params, report = train(_fast_config(steps=0), checkpoint_path=tmp_path / "c.bin")
    assert report.loss_curve == []
    assert (tmp_path / "c.bin").is_file()


def test_training_is_deterministic():
    _, r1 = train(_fast_config(steps=6))
    _, r2 = train(_fast_config(steps=6))
    assert r1.loss_curve == r2.loss_curve


def test_training_loss_decreases_on_overfit():
    cfg = _fast_config(n_scenes=1, steps=220, rays_per_step=64, image_size=12,
                       k_samples=4, eval_interval=220)
    _, report = train(cfg)
    early = float(np.mean(report.loss_curve[:20]))
    late = float(np.mean(report.loss_curve[-20:]))
    assert late < early * 0.5


def test_overfit_reaches_high_training_psnr():
    # training-distribution quality gate at toy scale: mse -> psnr conversion
    cfg = _fast_config(n_scenes=1, steps=400, rays_per_step=96, image_size=12,
                       k_samples=6, eval_interval=400)
    _, report = train(cfg)
    late_mse = float(np.mean(report.loss_curve[-25:]))
    assert 10 * np.log10(1.0 / late_mse) >= 25.0


def test_checkpoint_round_trip_same_heldout_psnr(tmp_path, tiny_trained):
    from advrf.renderer import load_checkpoint, save_checkpoint

    params, config = tiny_trained
    p = tmp_path / "ckpt.bin"
    save_checkpoint(params, p)
    again = load_checkpoint(p)
    a = heldout_psnr(params, config, n_scenes=1)
    b = heldout_psnr(again, config, n_scenes=1)
    assert a == b


def test_invalid_configs_rejected():
    with pytest.raises(ContractError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ContractError):
        TrainConfig(n_scenes=0)


def test_report_json_round_trips():
    import json

    _, report = train(_fast_config(steps=3))
    blob = json.loads(report.to_json())
    assert blob["loss_curve"] == report.loss_curve
