import os

import numpy as np
import pytest

from app.models.schemas import NetConfig
from tests.helpers import smooth_image, write_png


def pytest_collection_modifyitems(config, items):
    if os.getenv("MDCN_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="slow: set MDCN_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def micro_config():
    """F=4, K=2, one block of one unit"""
    return NetConfig(feat=4, growth=2, n_blocks=1, n_units=1, scale=2)


@pytest.fixture
def small_config():
    return NetConfig(feat=8, growth=4, n_blocks=2, n_units=2, scale=2)


@pytest.fixture
def image_dir(tmp_path):
    """Three small PNGs with different sizes"""
    root = tmp_path / "hr"
    write_png(root / "a.png", smooth_image(48, 40, seed=1))
    write_png(root / "b.png", smooth_image(37, 52, seed=2))
    write_png(root / "c.png", smooth_image(64, 64, seed=3))
    return root
