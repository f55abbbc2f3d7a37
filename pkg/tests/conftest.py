import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from scipy import ndimage
from skimage.draw import circle_perimeter

sys.path.insert(0, os.path.dirname(__file__))

from fcsin.config import Config, NetConfig  # noqa: E402

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

TINY_NET = NetConfig(channels=8, scales=2, window=4)


def tiny_config(**train) -> Config:
    kw = dict(crop_width=32, crop_height=32, batch_size=4, epochs=1, ckpt_every=0)
    kw.update(train)
    return Config(net=TINY_NET).override(**kw)


def textured(seed: int, size: int = 128) -> np.ndarray:
    rng = np.random.default_rng(seed)
    img = ndimage.gaussian_filter(rng.random((size, size)), 2.0)
    img -= img.min()
    return img / img.max()


def circle_sketch(size: int = 48, r: int = 15, gap: int = 0) -> np.ndarray:
    img = np.ones((size, size))
    rr, cc = circle_perimeter(size // 2, size // 2, r)
    img[rr, cc] = 0.0
    if gap:
        # cut a vertical slit of `gap` pixels through the right side
        c = size // 2 + r
        img[size // 2 - (gap - 1) // 2: size // 2 + gap // 2 + 1, c - 1:c + 2] = 1.0
    return img


def grid_sketch(rows: int, cols: int, cell: int = 12, margin: int = 6) -> np.ndarray:
    # the margin must exceed the largest ball radius or the outer strip fragments
    h, w = rows * cell + 1 + 2 * margin, cols * cell + 1 + 2 * margin
    img = np.ones((h, w))
    y0 = x0 = margin
    for i in range(rows + 1):
        img[y0 + i * cell, x0:x0 + cols * cell + 1] = 0.0
    for j in range(cols + 1):
        img[y0:y0 + rows * cell + 1, x0 + j * cell] = 0.0
    return img


@pytest.fixture
def tiny_cfg() -> Config:
    return tiny_config()
