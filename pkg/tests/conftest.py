import numpy as np
import pytest

from lesionsearch.imagecore import ImageGrid


@pytest.fixture
def rng():
    return np.random.default_rng(20240813)


@pytest.fixture
def ramp4() -> ImageGrid:
    # 4x4 ramp: pixel (x, y) = (y*4 + x) / 15
    vals = np.arange(16, dtype=np.float64).reshape(4, 4) / 15.0
    return ImageGrid(vals)


def random_image(rng: np.random.Generator, h: int = 32, w: int = 32) -> ImageGrid:
    return ImageGrid(rng.random((1, h, w)))
