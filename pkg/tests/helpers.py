import os
from pathlib import Path

import numpy as np
import pytest
from PIL import Image


def dataset_dir(env_name: str) -> Path:
    """Benchmark directory from the environment, or skip with a notice"""
    value = os.getenv(env_name)
    if not value or not Path(value).is_dir():
        pytest.skip(f"{env_name} is not set to a dataset directory")
    return Path(value)


def smooth_image(h: int, w: int, seed: int = 0) -> np.ndarray:
    """Band-limited RGB test image in [0, 1]"""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((h, w, 3))
    for c in range(3):
        for _ in range(4):
            fy, fx = rng.uniform(0.02, 0.15, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            img[..., c] += np.sin(fy * yy + fx * xx + phase)
    img = (img - img.min()) / (img.max() - img.min())
    return img.astype(np.float32)


def blocky_image(h: int, w: int, seed: int = 0, n_rects: int = 30, grid: int = 1) -> np.ndarray:
    """Random flat-colored rectangles over a random background; corners snap to ``grid``"""
    rng = np.random.default_rng(seed)
    img = np.empty((h, w, 3))
    img[:] = rng.uniform(0, 1, size=3)
    for _ in range(n_rects):
        rh, rw = rng.integers(2, 13, size=2) * grid
        y = int(rng.integers(0, max(1, (h - rh) // grid + 1))) * grid
        x = int(rng.integers(0, max(1, (w - rw) // grid + 1))) * grid
        img[y:y + rh, x:x + rw] = rng.uniform(0, 1, size=3)
    return img.astype(np.float32)


def write_png(path: Path, img: np.ndarray) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)).save(path)
    return path


