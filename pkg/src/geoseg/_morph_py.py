"""Pure numpy versions of the morphology kernels in ``_morph_ext``."""

import numpy as np


def _shifted(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    # out[y, x] = img[clamp(y + dy), clamp(x + dx)]
    h, w = img.shape
    rows = np.clip(np.arange(h) + dy, 0, h - 1)
    cols = np.clip(np.arange(w) + dx, 0, w - 1)
    return img[rows[:, None], cols[None, :]]


def erode_offsets(img, offsets):
    img = np.ascontiguousarray(img, dtype=np.float64)
    out = None
    for dy, dx in np.asarray(offsets):
        s = _shifted(img, int(dy), int(dx))
        out = s if out is None else np.minimum(out, s)
    return out


def dilate_offsets(img, offsets):
    img = np.ascontiguousarray(img, dtype=np.float64)
    out = None
    for dy, dx in np.asarray(offsets):
        s = _shifted(img, -int(dy), -int(dx))
        out = s if out is None else np.maximum(out, s)
    return out


def _dilate3x3(a: np.ndarray) -> np.ndarray:
    p = np.pad(a, 1, mode="constant", constant_values=-np.inf)
    h, w = a.shape
    out = a.copy()
    for dy in range(3):
        for dx in range(3):
            np.maximum(out, p[dy:dy + h, dx:dx + w], out=out)
    return out


def reconstruct_by_dilation(marker, mask):
    """Iterate 8-connected geodesic dilation until stable."""
    mask = np.ascontiguousarray(mask, dtype=np.float64)
    marker = np.asarray(marker, dtype=np.float64)
    if marker.shape != mask.shape:
        raise ValueError("marker and mask differ in shape")
    cur = np.minimum(marker, mask)
    while True:
        nxt = np.minimum(_dilate3x3(cur), mask)
        if np.array_equal(nxt, cur):
            return nxt
        cur = nxt
