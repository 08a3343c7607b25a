"""Synthetic image data and an on-disk image-directory loader.

The synthetic generator produces three tissue-like classes that differ in
patch-level color statistics (so a linear probe on mean patch color
separates them perfectly) and in texture: dark round blobs, diagonal
banding, or coarse speckle.  Images are float64 RGB in [0, 1] and fully
deterministic under a seed.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigError

# per-class base stain colors, chosen well separated in RGB
CLASS_COLORS = np.array(
    [
        [0.78, 0.42, 0.58],
        [0.42, 0.32, 0.70],
        [0.62, 0.62, 0.38],
    ]
)
NUM_CLASSES = 3


def _smooth_noise(rng, h, w, cells=4, amp=0.06):
    """Low-frequency field: coarse grid noise upsampled bilinearly."""
    grid = rng.normal(0.0, amp, size=(cells + 1, cells + 1))
    ys = np.linspace(0, cells, h)
    xs = np.linspace(0, cells, w)
    y0 = np.minimum(ys.astype(int), cells - 1)
    x0 = np.minimum(xs.astype(int), cells - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    g = (
        grid[y0][:, x0] * (1 - fy) * (1 - fx)
        + grid[y0 + 1][:, x0] * fy * (1 - fx)
        + grid[y0][:, x0 + 1] * (1 - fy) * fx
        + grid[y0 + 1][:, x0 + 1] * fy * fx
    )
    return g


def _render(rng: np.random.Generator, label: int, h: int, w: int) -> np.ndarray:
    img = np.empty((h, w, 3))
    img[:] = CLASS_COLORS[label]
    img += _smooth_noise(rng, h, w)[:, :, None]

    yy, xx = np.mgrid[0:h, 0:w]
    if label == 0:
        # dark nuclei-like blobs
        for _ in range(max(3, (h * w) // 200)):
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            r = rng.uniform(h / 24, h / 10)
            mask = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r)))
            img -= 0.35 * mask[:, :, None] * np.array([0.5, 1.0, 0.6])
    elif label == 1:
        period = max(4, h // 6)
        phase = rng.uniform(0, 2 * np.pi)
        bands = 0.5 + 0.5 * np.sin(2 * np.pi * (yy + xx) / period + phase)
        img += 0.12 * (bands - 0.5)[:, :, None] * np.array([1.0, 0.4, -0.6])
    else:
        block = max(2, h // 8)
        cells_y, cells_x = h // block + 1, w // block + 1
        speck = rng.uniform(-1, 1, size=(cells_y, cells_x))
        up = np.repeat(np.repeat(speck, block, 0), block, 1)[:h, :w]
        img += 0.10 * up[:, :, None] * np.array([0.3, 0.8, -0.5])

    img += rng.normal(0.0, 0.02, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def generate_dataset(
    n: int, image_h: int, image_w: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """n images cycled over the three classes; returns (images, labels)."""
    if n < 1:
        raise ConfigError("dataset size must be >= 1")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % NUM_CLASSES
    images = np.stack(
        [_render(rng, int(lab), image_h, image_w) for lab in labels]
    )
    return images, labels.astype(np.int64)


def load_image_directory(
    root: str, image_h: int, image_w: int
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Load a class-per-subdirectory image tree (e.g. the Kaggle lung set).

    Subdirectory names sorted lexicographically define the class indices.
    Images are resized to (image_h, image_w) and scaled to [0, 1].
    """
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover
        raise ConfigError(
            "loading image directories requires Pillow (pip install fedcls[images])"
        ) from exc
    classes = sorted(
        d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))
    )
    if not classes:
        raise ConfigError(f"no class subdirectories under {root}")
    images, labels = [], []
    for ci, cname in enumerate(classes):
        cdir = os.path.join(root, cname)
        for fname in sorted(os.listdir(cdir)):
            path = os.path.join(cdir, fname)
            try:
                with Image.open(path) as im:
                    im = im.convert("RGB").resize((image_w, image_h))
                    images.append(np.asarray(im, dtype=np.float64) / 255.0)
                    labels.append(ci)
            except OSError:
                continue
    if not images:
        raise ConfigError(f"no readable images under {root}")
    return np.stack(images), np.array(labels, dtype=np.int64), classes
