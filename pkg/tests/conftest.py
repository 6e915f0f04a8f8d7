import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=300,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_gen_config():
    from meshlift.datagen.dataset import GenConfig

    return GenConfig(image_size=32, N=3, seed=3, train=12, val=6, test_known=6, test_new=6,
                     test_plain=4, frames_per_sequence=3, warmup_steps=300, frame_interval=60,
                     train_textures=4, new_textures=2)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory, tiny_gen_config):
    from meshlift.datagen.dataset import generate_dataset

    root = tmp_path_factory.mktemp("tiny_ds")
    generate_dataset(tiny_gen_config, root)
    return root


@pytest.fixture(scope="session")
def tiny_model_config():
    from meshlift.model import ModelConfig

    return ModelConfig(N=3, C=8, H_o=32, W_o=32, stage_width=8, depth_width=8, lr=1e-3,
                       epochs0=1, epochs1=1, epochs2=1, batch_size=3)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """criterion number -> (passed, detail); printed in the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
