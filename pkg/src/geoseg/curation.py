"""Dataset curation: chipping, High Label Filter, train/val split, manifests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .raster import MaskTile, RasterError, Tile

MANIFEST_MAGIC = "#geoseg-manifest"
MANIFEST_VERSION = "v1"
PRNG_NAME = "numpy-pcg64"
SPLITS = ("train", "val", "test")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class CurationConfig:
    tile_size: int = 224
    hlf_threshold: float = 0.3
    split_ratio: float = 0.85
    seed: int = 0

    def __post_init__(self):
        if self.tile_size <= 0:
            raise ValueError(f"tile_size must be positive, got {self.tile_size}")
        if not 0.0 <= self.hlf_threshold <= 1.0:
            raise ValueError(f"hlf_threshold must be in [0, 1], got {self.hlf_threshold}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError(f"split_ratio must be in (0, 1), got {self.split_ratio}")


def chip(image: Tile, mask: MaskTile, tile_size: int = 224) -> list[tuple[Tile, MaskTile]]:
    """Cut an image/mask pair into a non-overlapping grid of full tiles.

    Edge strips narrower than ``tile_size`` are dropped. Output is row-major;
    each tile's ``origin`` is its (row, col) offset in the parent image.
    """
    if image.shape != mask.shape:
        raise RasterError(f"image {image.shape} and mask {mask.shape} differ in size")
    h, w = image.shape
    if h < tile_size or w < tile_size:
        raise RasterError(f"image {image.shape} is smaller than tile size {tile_size}")
    oy, ox = image.origin
    out = []
    for r in range(0, h - tile_size + 1, tile_size):
        for c in range(0, w - tile_size + 1, tile_size):
            win = (slice(r, r + tile_size), slice(c, c + tile_size))
            bands = tuple(replace(b, data=b.data[win]) for b in image.bands)
            tile = Tile(bands, gsd=image.gsd, source_id=image.source_id, origin=(oy + r, ox + c))
            out.append((tile, MaskTile(mask.data[win])))
    return out


def hlf(mask: MaskTile) -> float:
    """Fraction of building pixels in a mask."""
    return int(np.count_nonzero(mask.data)) / mask.data.size


def filter_by_hlf(pairs: Iterable[tuple[Tile, MaskTile]], threshold: float = 0.3):
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    return [p for p in pairs if hlf(p[1]) >= threshold]


def train_size(n: int, ratio: float) -> int:
    """round(n * ratio), half up, computed in decimal so 0.85 stays 0.85."""
    return int((Decimal(n) * Decimal(str(ratio))).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def split_train_val(pairs: Sequence, ratio: float = 0.85, seed: int = 0):
    """Shuffle with a seeded permutation and cut at round(n * ratio)."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    items = list(pairs)
    if not items:
        raise ValueError("cannot split an empty dataset")
    order = np.random.default_rng(seed).permutation(len(items))
    k = train_size(len(items), ratio)
    return [items[i] for i in order[:k]], [items[i] for i in order[k:]]


@dataclass(frozen=True)
class ManifestEntry:
    tile_path: str
    mask_path: str
    gsd: float
    source_id: str
    split: str
    composite_path: str | None = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ManifestError(f"split must be one of {SPLITS}, got {self.split!r}")
        if not self.tile_path or not self.mask_path:
            raise ManifestError(f"entry {self.source_id!r} is missing its tile or mask path")


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    prng: str = PRNG_NAME
    seed: int = 0
    meta: dict[str, str] = field(default_factory=dict)
    root: Path | None = None  # directory relative paths resolve against

    def resolve(self, p: str) -> Path:
        path = Path(p)
        if not path.is_absolute() and self.root is not None:
            path = self.root / path
        return path

    def split(self, tag: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == tag]

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        if not isinstance(other, Manifest):
            return NotImplemented
        return (self.entries, self.prng, self.seed, self.meta) == (
            other.entries, other.prng, other.seed, other.meta)


def _fmt_gsd(g: float) -> str:
    return repr(float(g))


def write_manifest(manifest: Manifest, path) -> None:
    for e in manifest.entries:
        for value in (e.tile_path, e.mask_path, e.source_id, e.composite_path or ""):
            if "\t" in value or "\n" in value:
                raise ManifestError(f"entry {e.source_id!r}: tabs/newlines not allowed in fields")
    header = [MANIFEST_MAGIC, MANIFEST_VERSION, f"prng={manifest.prng}", f"seed={int(manifest.seed)}"]
    header += [f"{k}={v}" for k, v in sorted(manifest.meta.items())]
    lines = [" ".join(header)]
    for e in manifest.entries:
        fields = [e.tile_path, e.mask_path, _fmt_gsd(e.gsd), e.source_id, e.split]
        if e.composite_path is not None:
            fields.append(e.composite_path)
        lines.append("\t".join(fields))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path, check_files: bool = True) -> Manifest:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(MANIFEST_MAGIC):
        raise ManifestError(f"{path}:1: missing '{MANIFEST_MAGIC}' header")
    parts = lines[0].split()
    if len(parts) < 2 or parts[1] != MANIFEST_VERSION:
        raise ManifestError(f"{path}:1: unsupported manifest version")
    kv = {}
    for tok in parts[2:]:
        if "=" not in tok:
            raise ManifestError(f"{path}:1: malformed header field {tok!r}")
        k, v = tok.split("=", 1)
        kv[k] = v
    try:
        seed = int(kv.pop("seed", "0"))
    except ValueError:
        raise ManifestError(f"{path}:1: seed must be an integer") from None
    m = Manifest(prng=kv.pop("prng", PRNG_NAME), seed=seed, meta=kv, root=path.parent)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) not in (5, 6):
            raise ManifestError(f"{path}:{lineno}: expected 5 or 6 tab-separated fields, got {len(fields)}")
        try:
            gsd = float(fields[2])
        except ValueError:
            raise ManifestError(f"{path}:{lineno}: gsd {fields[2]!r} is not a number") from None
        if not math.isfinite(gsd) or gsd <= 0:
            raise ManifestError(f"{path}:{lineno}: gsd must be positive")
        try:
            entry = ManifestEntry(fields[0], fields[1], gsd, fields[3], fields[4],
                                  fields[5] if len(fields) == 6 and fields[5] else None)
        except ManifestError as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from None
        m.entries.append(entry)
    if check_files:
        validate_manifest(m)
    return m


def validate_manifest(m: Manifest) -> None:
    for e in m.entries:
        for label, p in (("tile", e.tile_path), ("mask", e.mask_path), ("composite", e.composite_path)):
            if p is not None and not m.resolve(p).is_file():
                raise ManifestError(f"entry {e.source_id!r}: {label} file not found: {p}")
