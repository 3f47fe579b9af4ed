import numpy as np
import pytest
from PIL import Image

from resincam.imaging import BinaryMask, RasterImage


def solid(width, height, color):
    """Uniform RGB image."""
    arr = np.zeros((height, width, 3), dtype=np.uint8)
    arr[:, :] = color
    return RasterImage(arr)


def paint(img, x0, y0, x1, y1, color):
    """New image with the inclusive rectangle painted over."""
    arr = img.array.copy()
    arr[y0:y1 + 1, x0:x1 + 1] = color
    return RasterImage(arr)


def mask_of(rows):
    """Mask from a list of 0/1 rows."""
    return BinaryMask(np.array(rows, dtype=bool))


def write_png(path, img):
    Image.fromarray(img.array, mode="RGB").save(str(path), format="PNG")
    return str(path)


def random_mask(rng, width, height, p=0.5):
    return BinaryMask(rng.random((height, width)) < p)


@pytest.fixture
def rng():
    return np.random.default_rng(20230512)


@pytest.fixture
def two_tone():
    """Dark luma-40 blob on a light luma-200 ground, 12x10.

    (40, 40, 40) has luma 40 and (200, 200, 200) luma 200; the blob is
    the 4x3 rectangle at columns 3..6, rows 2..4.
    """
    img = solid(12, 10, (200, 200, 200))
    img = paint(img, 3, 2, 6, 4, (40, 40, 40))
    blob = np.zeros((10, 12), dtype=bool)
    blob[2:5, 3:7] = True
    return img, BinaryMask(blob)
