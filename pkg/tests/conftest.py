import numpy as np
import pytest
import torch

from glc.codec import GLCModel
from glc.config import toy_config


@pytest.fixture()
def toy_model():
    torch.manual_seed(0)
    return GLCModel(toy_config()).eval()


@pytest.fixture()
def toy_images():
    from glc.data import synthetic_images

    return synthetic_images(8, size=32, seed=42)


def seed_all(seed: int) -> np.random.Generator:
    torch.manual_seed(seed)
    return np.random.default_rng(seed)
