import numpy as np
import pytest

from cdkd.data import make_synthetic
from cdkd.models import NetworkSpec


@pytest.fixture(scope="session")
def tiny_data():
    """Small synthetic train/val pair shared by trainer-level tests."""
    train = make_synthetic(4, 24, 8, seed=7, split="train")
    val = make_synthetic(4, 12, 8, seed=7, split="val")
    return train, val


@pytest.fixture(scope="session")
def tiny_specs():
    teacher = NetworkSpec.from_channels([6, 12], num_classes=4)
    student = NetworkSpec.from_channels([4, 6], num_classes=4)
    return teacher, student


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
