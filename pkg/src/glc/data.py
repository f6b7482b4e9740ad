"""Synthetic toy images and image file I/O."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

IMAGE_EXTENSIONS = (".png", ".bmp", ".ppm", ".tif", ".tiff")


def synthetic_images(n: int, size: int = 64, seed: int = 0) -> np.ndarray:
    """Structured random images: gradients, blocks and disks with mild noise.

    Returns (n, size, size, 3) float32 in [0, 1]. The structure gives the
    codec spatial redundancy to exploit while staying cheap to generate.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / size
    out = np.empty((n, size, size, 3), dtype=np.float32)
    for i in range(n):
        a, b = rng.uniform(-1, 1, size=2)
        base = (a * xx + b * yy - min(a + b, 0)) / (abs(a) + abs(b) + 1e-6)
        img = np.stack([base * c + o for c, o in
                        zip(rng.uniform(0.3, 1.0, 3), rng.uniform(0.0, 0.4, 3))], axis=-1)
        for _ in range(rng.integers(2, 5)):
            r0, c0 = rng.integers(0, size - 8, size=2)
            rh, cw = rng.integers(6, size // 2, size=2)
            img[r0:r0 + rh, c0:c0 + cw] = rng.uniform(0, 1, 3)
        for _ in range(rng.integers(1, 3)):
            cy, cx = rng.uniform(0.2, 0.8, size=2) * size
            rad = rng.uniform(size * 0.08, size * 0.25)
            mask = (yy * size - cy) ** 2 + (xx * size - cx) ** 2 < rad ** 2
            img[mask] = rng.uniform(0, 1, 3)
        img = gaussian_filter(img, sigma=(rng.uniform(0.5, 1.5),) * 2 + (0,))
        img += rng.normal(0, 0.01, img.shape)
        out[i] = np.clip(img, 0.0, 1.0)
    return out


def load_image(path: str) -> np.ndarray:
    """Read an image file as (H, W, 3) float32 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def save_image(path: str, image) -> None:
    """Write an (H, W, 3) array in [0, 1] as an 8-bit image file."""
    arr = np.asarray(image, dtype=np.float32)
    data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)


def list_images(directory: str) -> list[str]:
    files = sorted(
        os.path.join(directory, f) for f in os.listdir(directory)
        if f.lower().endswith(IMAGE_EXTENSIONS)
    )
    return files
