"""Guiding feature bands derived from RGB tiles and the three-band composites.

Derived bands: PC1 (leading principal component), SOBEL (edge magnitude of
luma), VDVI (visible-band vegetation index) and MBI (morphological building
index). Composites place three bands into the R/G/B slots:

    CB0 = (R, G, B)   CB1 = (SOBEL, VDVI, PC1)   CB2 = (SOBEL, VDVI, MBI)
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import morph
from .raster import Band, RasterError, Tile, normalize_band

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
SOBEL_Y = np.array([[1, 2, 1], [0, 0, 0], [-1, -2, -1]], dtype=np.float64)
LUMA = (0.299, 0.587, 0.114)


class DegenerateFeatureWarning(RuntimeWarning):
    """A feature could not be computed meaningfully (e.g. zero-variance PCA)."""


@dataclass(frozen=True)
class MbiParams:
    directions: tuple[float, ...] = (0.0, 45.0, 90.0, 135.0)
    s_min: int = 2
    s_max: int = 52
    delta_s: int = 5

    def __post_init__(self):
        object.__setattr__(self, "directions", tuple(float(d) for d in self.directions))
        if not self.directions:
            raise ValueError("MBI needs at least one direction")
        if self.s_min < 1 or self.delta_s < 1:
            raise ValueError("s_min and delta_s must be >= 1")
        if self.s_min + self.delta_s > self.s_max:
            raise ValueError("need s_min + delta_s <= s_max")

    @property
    def scales(self) -> tuple[int, ...]:
        """Lengths s with s + delta_s <= s_max; each yields one profile difference."""
        return tuple(range(self.s_min, self.s_max - self.delta_s + 1, self.delta_s))

    @property
    def n_bands(self) -> int:
        return len(self.directions) * len(self.scales)


COMPOSITES = {
    "cb0": ("R", "G", "B"),
    "cb1": ("SOBEL", "VDVI", "PC1"),
    "cb2": ("SOBEL", "VDVI", "MBI"),
}


@dataclass(frozen=True)
class CompositeSpec:
    kind: str = "cb0"

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in COMPOSITES:
            raise ValueError(f"unknown composite {self.kind!r}; choose from {sorted(COMPOSITES)}")
        object.__setattr__(self, "kind", kind)

    @property
    def slot_bands(self) -> tuple[str, str, str]:
        return COMPOSITES[self.kind]


def _rgb(tile: Tile):
    if tile.names != ("R", "G", "B"):
        raise RasterError(f"expected bands (R, G, B), got {tile.names}")
    return (b.data for b in tile.bands)


def brightness(tile: Tile) -> Band:
    """Per-pixel maximum over all bands."""
    data = np.max(np.stack([b.data for b in tile.bands]), axis=0)
    lo = min(b.value_range[0] for b in tile.bands)
    hi = max(b.value_range[1] for b in tile.bands)
    return Band(data, (lo, hi), "BRIGHTNESS")


def luma(tile: Tile) -> Band:
    r, g, b = _rgb(tile)
    return Band(LUMA[0] * r + LUMA[1] * g + LUMA[2] * b, tile.bands[0].value_range, "LUMA")


def _correlate3x3(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    p = np.pad(img, 1, mode="edge")
    h, w = img.shape
    out = np.zeros_like(img)
    for dy in range(3):
        for dx in range(3):
            if kernel[dy, dx]:
                out += kernel[dy, dx] * p[dy:dy + h, dx:dx + w]
    return out


def sobel_magnitude(gray: Band | Tile) -> Band:
    """Edge magnitude sqrt(Gx^2 + Gy^2) with edge-replicated borders.

    A tile is reduced to luma first. The value range is [0, observed max].
    """
    if isinstance(gray, Tile):
        gray = luma(gray)
    img = gray.data
    if min(img.shape) < 3:
        raise RasterError(f"Sobel needs at least 3x3 pixels, got {img.shape}")
    gx = _correlate3x3(img, SOBEL_X)
    gy = _correlate3x3(img, SOBEL_Y)
    mag = np.hypot(gx, gy)
    return Band(mag, (0.0, float(mag.max())), "SOBEL")


def vdvi(tile: Tile) -> Band:
    r, g, b = _rgb(tile)
    num = 2.0 * g - r - b
    den = 2.0 * g + r + b
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den != 0)
    return Band(np.clip(out, -1.0, 1.0), (-1.0, 1.0), "VDVI")


@dataclass(frozen=True)
class PcaResult:
    eigenvalues: np.ndarray   # descending
    eigenvectors: np.ndarray  # columns, matching eigenvalues
    scores: np.ndarray        # (H, W, 3) projections onto every component
    degenerate: bool = False


def pca_rgb(tile: Tile) -> PcaResult:
    """Per-image PCA over the pixels of a three-band tile.

    Covariance uses the population normaliser so that the variance of each
    score band equals its eigenvalue. Each eigenvector's sign is chosen so
    that its dot product with (1, 1, 1) is non-negative.
    """
    x = np.stack(list(_rgb(tile)), axis=-1).reshape(-1, 3)
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / len(xc)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = np.clip(vals[order], 0.0, None), vecs[:, order]
    flip = vecs.sum(axis=0) < 0
    vecs[:, flip] *= -1.0
    scores = (xc @ vecs).reshape(*tile.shape, 3)
    return PcaResult(vals, vecs, scores, degenerate=not vals[0] > 0)


def pc1(tile: Tile) -> Band:
    res = pca_rgb(tile)
    if res.degenerate:
        warnings.warn("zero-variance tile: PC1 is identically zero", DegenerateFeatureWarning, stacklevel=2)
        return Band(np.zeros(tile.shape), (0.0, 0.0), "PC1")
    data = res.scores[..., 0]
    return Band(data, (float(data.min()), float(data.max())), "PC1")


def white_tophat_profile(b: np.ndarray, params: MbiParams, backend=None) -> dict:
    """W(d, s) = b - opening_by_reconstruction(b, line(d, s)) for every needed (d, s)."""
    lengths = sorted(set(params.scales) | {s + params.delta_s for s in params.scales})
    return {(d, s): b - morph.opening_by_reconstruction(b, s, d, backend)
            for d in params.directions for s in lengths}


def mbi_raw(tile: Tile, params: MbiParams = MbiParams(), backend=None) -> np.ndarray:
    """Mean differential top-hat profile over all directions and scales, unnormalised."""
    h, w = tile.shape
    if params.s_max > max(h, w):
        raise RasterError(f"s_max={params.s_max} exceeds image size {tile.shape}")
    b = brightness(tile).data
    prof = white_tophat_profile(b, params, backend)
    acc = np.zeros_like(b)
    for d in params.directions:
        for s in params.scales:
            acc += np.abs(prof[(d, s + params.delta_s)] - prof[(d, s)])
    return acc / params.n_bands


def mbi(tile: Tile, params: MbiParams = MbiParams(), backend=None) -> Band:
    """Morphological building index, min-max scaled to [0, 1] per image.

    A flat response (e.g. a constant image) maps to all zeros.
    """
    raw = mbi_raw(tile, params, backend)
    lo, hi = float(raw.min()), float(raw.max())
    data = (raw - lo) / (hi - lo) if hi > lo else np.zeros_like(raw)
    return Band(data, (0.0, 1.0), "MBI")


def equalize_band(values: np.ndarray) -> np.ndarray:
    """Map 8-bit levels through round(cdf * 255).

    Single-level bands are returned unchanged; there is no contrast to stretch.
    """
    v = np.clip(np.floor(np.asarray(values, dtype=np.float64) + 0.5), 0, 255).astype(np.int64)
    if v.min() == v.max():
        return v.astype(np.float64)
    hist = np.bincount(v.ravel(), minlength=256)
    cdf = np.cumsum(hist) / v.size
    lut = np.floor(cdf * 255.0 + 0.5)
    return lut[v]


def hist_equalize(tile: Tile) -> Tile:
    bands = tuple(Band(equalize_band(b.data), (0.0, 255.0), b.name) for b in tile.bands)
    return Tile(bands, gsd=tile.gsd, source_id=tile.source_id, origin=tile.origin)


FEATURES = {
    "SOBEL": sobel_magnitude,
    "VDVI": vdvi,
    "PC1": pc1,
}


def derive_band(tile: Tile, name: str, mbi_params: MbiParams = MbiParams()) -> Band:
    if name in tile.names:
        return tile.band(name)
    if name == "MBI":
        return mbi(tile, mbi_params)
    if name in FEATURES:
        return FEATURES[name](tile)
    raise RasterError(f"band {name!r} is neither present nor derivable")


def assemble_composite(tile: Tile, spec: CompositeSpec | str,
                       mbi_params: MbiParams = MbiParams()) -> Tile:
    """Three-band composite with each slot rescaled from its value range onto [0, 255].

    CB0 returns the tile unchanged. Missing derived bands are computed from
    the R/G/B bands when the tile has them.
    """
    if isinstance(spec, str):
        spec = CompositeSpec(spec)
    if spec.kind == "cb0":
        missing = [n for n in spec.slot_bands if n not in tile.names]
        if missing:
            raise RasterError(f"CB0 needs bands R, G, B; missing {missing}")
        if tile.names == spec.slot_bands:
            return tile
    slots = tuple(normalize_band(derive_band(tile, n, mbi_params), (0.0, 255.0))
                  for n in spec.slot_bands)
    return Tile(slots, gsd=tile.gsd, source_id=tile.source_id, origin=tile.origin)
