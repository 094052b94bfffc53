import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from advrf.renderer import RendererParams
from advrf.scenes import make_dataset, random_scene
from advrf.training import TrainConfig, train

CKPT_CACHE = Path(__file__).parent / ".cache"


@pytest.fixture(scope="session")
def tiny_trained():
    """A small renderer trained just enough to behave like a renderer.

    Cached on disk so repeated test runs skip the ~1 minute of training.
    """
    from advrf.renderer import load_checkpoint, save_checkpoint

    CKPT_CACHE.mkdir(exist_ok=True)
    path = CKPT_CACHE / "tiny_trained.bin"
    config = TrainConfig(n_scenes=40, views_per_scene=6, rays_per_step=160, steps=900,
                         image_size=24, k_samples=8, eval_interval=900, n_eval_scenes=2,
                         seed=11)
    if path.is_file():
        try:
            return load_checkpoint(path), config
        except Exception:
            path.unlink()
    params, _ = train(config)
    save_checkpoint(params, path)
    return params, config


@pytest.fixture()
def small_dataset():
    scene = random_scene(21, n_primitives=3)
    return make_dataset(scene, 4, height=16, width=16, seed=21)


@pytest.fixture()
def untrained_params():
    return RendererParams(c_feat=8, d_sigma=8, hidden=16, seed=3)


_ACCEPTANCE: dict[str, bool] = {}


def record_acceptance(name: str, passed: bool):
    _ACCEPTANCE[name] = passed


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    out = yield
    rep = out.get_result()
    if rep.when == "call" and item.module.__name__ == "test_acceptance":
        label = getattr(item.function, "criterion_label", None)
        if label:
            _ACCEPTANCE[label] = rep.passed


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        status = "PASS" if _ACCEPTANCE[name] else "FAIL"
        terminalreporter.write_line(f"[{status}] {name}")
