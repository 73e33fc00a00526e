"""Raster data model: bands, tiles, masks, probability maps and 8-bit file I/O."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError


class RasterError(ValueError):
    """Raised for malformed rasters or unreadable raster files."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Band:
    data: np.ndarray
    value_range: tuple[float, float] = (0.0, 255.0)
    name: str = ""

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise RasterError(f"band {self.name!r} must be a non-empty 2-D grid, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise RasterError(f"band {self.name!r} contains non-finite values")
        lo, hi = (float(v) for v in self.value_range)
        if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
            raise RasterError(f"band {self.name!r} has invalid value range {self.value_range}")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "value_range", (lo, hi))

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class Tile:
    bands: tuple[Band, ...]
    gsd: float = 1.0
    source_id: str = ""
    origin: tuple[int, int] = (0, 0)

    def __post_init__(self):
        bands = tuple(self.bands)
        if not bands:
            raise RasterError("tile needs at least one band")
        shapes = {b.shape for b in bands}
        if len(shapes) != 1:
            raise RasterError(f"tile bands differ in shape: {sorted(shapes)}")
        if not self.gsd > 0:
            raise RasterError(f"gsd must be positive, got {self.gsd}")
        object.__setattr__(self, "bands", bands)
        object.__setattr__(self, "origin", (int(self.origin[0]), int(self.origin[1])))

    @classmethod
    def from_array(cls, arr: np.ndarray, names: Sequence[str] = ("R", "G", "B"),
                   value_range=(0.0, 255.0), **kw) -> "Tile":
        """Build a tile from an (H, W, C) or (H, W) array."""
        arr = np.asarray(arr)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise RasterError(f"expected (H, W, C) array, got {arr.shape}")
        names = list(names)[: arr.shape[2]]
        names += [f"B{i}" for i in range(len(names), arr.shape[2])]
        bands = tuple(Band(arr[:, :, i], value_range, n) for i, n in enumerate(names))
        return cls(bands, **kw)

    @property
    def shape(self) -> tuple[int, int]:
        return self.bands[0].shape

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(b.name for b in self.bands)

    def band(self, name: str) -> Band:
        for b in self.bands:
            if b.name == name:
                return b
        raise KeyError(f"tile has no band {name!r} (has {self.names})")

    def to_array(self) -> np.ndarray:
        """Stack bands into an (H, W, C) float64 array."""
        return np.stack([b.data for b in self.bands], axis=-1)


@dataclass(frozen=True)
class MaskTile:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise RasterError(f"mask must be 2-D, got {data.shape}")
        if not np.all((data == 0) | (data == 1)):
            raise RasterError("mask values must be 0 or 1")
        object.__setattr__(self, "data", _frozen(data.astype(np.uint8)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class ProbMap:
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise RasterError(f"probability map must be 2-D, got {data.shape}")
        if not np.all((data >= 0.0) & (data <= 1.0)):
            raise RasterError("probabilities must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


def _read_uint8(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such raster: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("L", "RGB", "RGBA", "1", "P"):
                raise RasterError(f"{path}: unsupported mode {im.mode} (need 8-bit)")
            if im.mode in ("1", "P"):
                im = im.convert("L")
            arr = np.asarray(im)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise RasterError(f"{path}: cannot decode raster ({exc})") from exc
    return arr


def load_tile(path, expected_bands: int = 3, gsd: float = 1.0, source_id: str | None = None) -> Tile:
    arr = _read_uint8(path)
    n = 1 if arr.ndim == 2 else arr.shape[2]
    if n != expected_bands:
        raise RasterError(f"{path}: expected {expected_bands} bands, file has {n}")
    names = ("R", "G", "B") if n == 3 else tuple(f"B{i}" for i in range(n))
    return Tile.from_array(arr.astype(np.float64), names=names, gsd=gsd,
                           source_id=source_id if source_id is not None else Path(path).stem)


def load_mask(path) -> MaskTile:
    """Load a single-band {0, 255} mask; values above 127 become buildings."""
    arr = _read_uint8(path)
    if arr.ndim != 2:
        raise RasterError(f"{path}: mask must be single-band, got {arr.shape[2]} bands")
    return MaskTile((arr > 127).astype(np.uint8))


def quantize(grid: np.ndarray, value_range=(0.0, 255.0)) -> np.ndarray:
    """Map values in ``value_range`` onto 0..255 and round half up."""
    grid = np.asarray(grid, dtype=np.float64)
    lo, hi = value_range
    if hi > lo:
        grid = (grid - lo) * (255.0 / (hi - lo))
    else:
        grid = np.full_like(grid, 127.5)
    return np.clip(np.floor(grid + 0.5), 0, 255).astype(np.uint8)


def save_raster(grid, path, value_range=None) -> None:
    """Write a 2-D or (H, W, 3) grid as an 8-bit PNG or TIFF.

    A grid whose values all lie in [0, 1] is treated as unit-range unless
    ``value_range`` says otherwise; masks and probability maps are written
    as round(v * 255).
    """
    if isinstance(grid, Tile):
        if value_range is None:
            value_range = grid.bands[0].value_range
        grid = grid.to_array()
    elif isinstance(grid, Band):
        if value_range is None:
            value_range = grid.value_range
        grid = grid.data
    elif isinstance(grid, MaskTile):
        grid = grid.data * np.uint8(255)
    elif isinstance(grid, ProbMap):
        grid, value_range = grid.data, (0.0, 1.0)
    arr = np.asarray(grid)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if not (arr.ndim == 2 or (arr.ndim == 3 and arr.shape[2] == 3)):
        raise RasterError(f"can only save 1- or 3-band grids, got {arr.shape}")
    if arr.dtype != np.uint8:
        if value_range is None:
            value_range = (0.0, 1.0) if arr.size and arr.min() >= 0 and arr.max() <= 1 else (0.0, 255.0)
        lo, hi = value_range
        if arr.size and (arr.min() < lo or arr.max() > hi):
            raise RasterError(f"values outside declared range {value_range}")
        arr = quantize(arr, value_range)
    path = Path(path)
    if not path.parent.is_dir():
        raise OSError(f"directory does not exist: {path.parent}")
    fmt = "TIFF" if path.suffix.lower() in (".tif", ".tiff") else "PNG"
    Image.fromarray(arr).save(path, format=fmt)


def normalize_band(band: Band, target=(0.0, 255.0)) -> Band:
    """Affinely map ``band.value_range`` onto ``target``.

    Constant declared ranges map every pixel to the target midpoint.
    """
    if not np.all(np.isfinite(band.data)):
        raise RasterError("cannot normalize non-finite band")
    lo, hi = band.value_range
    tlo, thi = (float(v) for v in target)
    if hi > lo:
        out = tlo + (band.data - lo) * ((thi - tlo) / (hi - lo))
        out = np.clip(out, tlo, thi)
    else:
        out = np.full(band.shape, (tlo + thi) / 2.0)
    return Band(out, (tlo, thi), band.name)
