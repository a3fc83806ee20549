import numpy as np
import pytest
import torch

from dapn.data import generate_toy_dataset, make_splits
from dapn.training import TrainConfig


def toy_config(**kw) -> TrainConfig:
    """Desk-scale configuration matched to the 8/4/4 toy dataset at 32 px."""
    base = dict(input_size=32, conv_widths=(16, 32, 64, 64), output_dim=64,
                embedding_dim=64, bottleneck_dim=32, n_sc=8, n_meta=4, k=5,
                q_source=5, q_target=5, augment_pad=4, total_steps=50,
                lr=0.01, checkpoint_every=0)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def toy_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    generate_toy_dataset(root, (8, 4, 4), samples_per_class=60, image_size=32,
                         seed=0)
    return root


@pytest.fixture(scope="session")
def toy_split(toy_root):
    return make_splits(toy_root, k=5, image_size=32)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(
            f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}")
