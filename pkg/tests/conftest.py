import sys

import numpy as np
import pytest
import torch

from objremove.synthetic import write_striped_dataset
from objremove.training import TrainConfig, build_manifest, checkpoint_save, init_state


def tiny_train_config(**overrides) -> TrainConfig:
    base = dict(batch_size=2, n_critic=1, input_size=(32, 32), base_width=4, critic_width=4,
                max_steps=3, checkpoint_interval=2, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(autouse=True)
def _seed_everything():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture(scope="session")
def striped_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("stripes")
    write_striped_dataset(d, 10, size=48, seed=3)
    return d


@pytest.fixture(scope="session")
def manifest(striped_dir, tmp_path_factory):
    return build_manifest(striped_dir, seed=0, path=tmp_path_factory.mktemp("man") / "manifest.json")


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    """Untrained 32x32 generator checkpoint."""
    state = init_state(tiny_train_config())
    return checkpoint_save(state, tmp_path_factory.mktemp("ckpt") / "tiny.ckpt")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split("criterion")[1].split()[0])):
            terminalreporter.write_line(line)
