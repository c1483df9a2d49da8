"""Seeded synthetic test images ("golden fixtures") for end-to-end checks."""
from __future__ import annotations

import numpy as np

from .numerics import bilinear_resize
from .predictor import Planted
from .tokenizer import TokenPyramid

N_GOLDEN = 20


def _coords(size: int):
    t = (np.arange(size) + 0.5) / size
    return np.meshgrid(t, t, indexing="ij")


def golden_image(index: int, size: int = 64) -> np.ndarray:
    """Deterministic RGB image in [0, 1]; ``index`` picks one of five motifs."""
    rng = np.random.Generator(np.random.Philox(key=1000 + index))
    y, x = _coords(size)
    base = rng.uniform(0.15, 0.85, size=3)
    accent = rng.uniform(0.0, 1.0, size=3)
    kind = index % 5
    if kind == 0:
        angle = rng.uniform(0, 2 * np.pi)
        t = np.cos(angle) * x + np.sin(angle) * y
        w = (t - t.min()) / (t.max() - t.min())
        img = base * (1 - w[..., None]) + accent * w[..., None]
    elif kind == 1:
        cy, cx = rng.uniform(0.3, 0.7, size=2)
        rad = rng.uniform(0.15, 0.3)
        inside = ((y - cy) ** 2 + (x - cx) ** 2 < rad ** 2)[..., None]
        img = np.where(inside, accent, base) * np.ones((size, size, 3))
    elif kind == 2:
        freq = rng.integers(2, 5)
        s = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (x + 0.3 * y))
        img = base * (1 - s[..., None]) + accent * s[..., None]
    elif kind == 3:
        img = np.ones((size, size, 3)) * base
        for _ in range(3):
            y0, x0 = rng.uniform(0.0, 0.7, size=2)
            hh, ww = rng.uniform(0.15, 0.3, size=2)
            box = ((y >= y0) & (y < y0 + hh) & (x >= x0) & (x < x0 + ww))[..., None]
            img = np.where(box, rng.uniform(0, 1, size=3), img)
    else:
        img = np.zeros((size, size, 3))
        for _ in range(4):
            cy, cx = rng.uniform(0, 1, size=2)
            sig = rng.uniform(0.08, 0.25)
            g = np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2 * sig ** 2))
            img += g[..., None] * rng.uniform(0, 0.8, size=3)
        img += 0.6 * base
    noise = rng.normal(scale=0.02, size=(size, size, 3))
    return np.clip(img + noise, 0.0, 1.0)


def golden_images(size: int = 64) -> list[np.ndarray]:
    return [golden_image(i, size) for i in range(N_GOLDEN)]


def box_region(shape: tuple[int, int], top: int, left: int, height: int, width: int) -> np.ndarray:
    region = np.zeros(shape, dtype=bool)
    region[top:top + height, left:left + width] = True
    return region


def planted_edit(source: TokenPyramid, vocab: int, region, keyword: str = "dog",
                 shift: int = 1) -> Planted:
    """Planted behaviour whose known answer is ``source`` with ``region`` relabelled.

    Inside the region (resized to each scale) every token moves ``shift``
    places round the vocabulary; a prompt containing ``keyword`` asks for
    that edited pyramid, any other prompt for the source.
    """
    region = np.asarray(region, dtype=bool)
    maps = []
    for m in source.maps:
        inside = bilinear_resize(region.astype(np.float64), *m.shape) >= 0.5
        maps.append(np.where(inside, (m + shift) % vocab, m))
    return Planted(source=source, edited=TokenPyramid(tuple(maps)), region=region, keyword=keyword)
