import pytest
import torch

from unlearnkit.data import SyntheticSpec, generate_synthetic
from unlearnkit.model import ViTConfig, build_model

torch.set_num_threads(1)

TINY = ViTConfig(image_size=8, patch_size=4, depth=2, heads=2, embed_dim=16, num_outputs=4)


@pytest.fixture
def tiny_config():
    return TINY


@pytest.fixture(scope="session")
def small_bundle():
    spec = SyntheticSpec(
        num_classes=4,
        image_size=8,
        per_split_counts={"train": 96, "forget": 32, "test": 40, "unseen": 32},
        seed=3,
    )
    return generate_synthetic(spec)


@pytest.fixture
def tiny_model(tiny_config):
    return build_model(tiny_config, seed=0)


@pytest.fixture(scope="session")
def theta0(small_bundle):
    from unlearnkit.data import DataAccess
    from unlearnkit.unlearn import train_model

    model = build_model(TINY, seed=0)
    train_model(model, DataAccess(small_bundle), "train", epochs=8, learning_rate=3e-3, batch_size=32, seed=0)
    return model


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(LINES):
            terminalreporter.write_line(LINES[n])
