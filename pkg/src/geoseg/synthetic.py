"""Synthetic building scenes for probes, demos and tests."""

from __future__ import annotations

import numpy as np

ROOF_COLORS = ((196, 178, 170), (150, 92, 80), (210, 210, 215), (120, 120, 135))
GROUND_COLORS = ((70, 110, 55), (95, 125, 70), (128, 118, 96), (105, 105, 105))


def _background(rng, size):
    base = np.array(GROUND_COLORS[rng.integers(len(GROUND_COLORS))], dtype=np.float64)
    img = np.broadcast_to(base, (size, size, 3)).copy()
    # a few vegetation / pavement patches so the ground is not flat
    for _ in range(3):
        c = np.array(GROUND_COLORS[rng.integers(len(GROUND_COLORS))], dtype=np.float64)
        y0, x0 = rng.integers(0, size, 2)
        h, w = rng.integers(size // 8, size // 3, 2)
        img[y0:y0 + h, x0:x0 + w] = c
    return img


def building_scene(rng: np.random.Generator, size: int = 64, n_buildings: int = 3,
                   l_shaped: bool = False, noise: float = 6.0):
    """One RGB scene (H, W, 3) in 0..255 with its binary building mask.

    Buildings are axis-aligned rectangles with a darker shadow strip on the
    lower-right; ``l_shaped`` makes the first building an L.
    """
    img = _background(rng, size)
    mask = np.zeros((size, size), dtype=np.uint8)
    for k in range(n_buildings):
        h, w = rng.integers(size // 6, size // 3, 2)
        y0 = int(rng.integers(2, size - h - 4))
        x0 = int(rng.integers(2, size - w - 4))
        roof = np.array(ROOF_COLORS[rng.integers(len(ROOF_COLORS))], dtype=np.float64)
        shadow = (slice(y0 + 2, min(size, y0 + h + 3)), slice(x0 + 2, min(size, x0 + w + 3)))
        img[shadow] *= 0.55
        if l_shaped and k == 0:
            h, w = max(h, size // 3), max(w, size // 3)
            h, w = min(h, size - y0 - 4), min(w, size - x0 - 4)
            t = max(4, min(h, w) // 3)
            cells = np.zeros((size, size), dtype=bool)
            cells[y0:y0 + h, x0:x0 + t] = True
            cells[y0 + h - t:y0 + h, x0:x0 + w] = True
        else:
            cells = np.zeros((size, size), dtype=bool)
            cells[y0:y0 + h, x0:x0 + w] = True
        img[cells] = roof
        mask[cells] = 1
    img += rng.normal(0.0, noise, img.shape)
    return np.clip(np.round(img), 0, 255), mask


def probe_dataset(n: int = 8, size: int = 64, seed: int = 0):
    """``n`` scenes (N, H, W, 3) and masks (N, H, W); the last scene holds an L-shaped building."""
    rng = np.random.default_rng(seed)
    imgs, masks = [], []
    for i in range(n):
        img, m = building_scene(rng, size, n_buildings=int(rng.integers(2, 4)), l_shaped=(i == n - 1))
        imgs.append(img)
        masks.append(m)
    return np.stack(imgs), np.stack(masks)


L_SHAPED_INDEX = -1
