"""Pixel metrics, confusion maps and per-group aggregation."""

from __future__ import annotations

import csv
import math
from collections import OrderedDict
from dataclasses import dataclass, field, fields
from typing import Iterable

import numpy as np

from .raster import MaskTile, ProbMap, RasterError, Tile

METRICS = ("accuracy", "precision", "recall", "f1", "branching_factor", "miss_factor", "iou")

# TP white, TN black, FP red, FN yellow
COLORS = {
    "tp": (255, 255, 255),
    "tn": (0, 0, 0),
    "fp": (255, 0, 0),
    "fn": (255, 255, 0),
}


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if int(v) != v or v < 0:
                raise ValueError(f"{f.name} must be a non-negative integer, got {v}")
            object.__setattr__(self, f.name, int(v))

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)


@dataclass(frozen=True)
class MetricReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    branching_factor: float
    miss_factor: float
    iou: float
    undefined: frozenset = field(default_factory=frozenset)

    def as_dict(self) -> dict:
        return {m: getattr(self, m) for m in METRICS}


def _mask(x) -> np.ndarray:
    return x.data if isinstance(x, MaskTile) else np.asarray(x)


def binarize(p, threshold: float = 0.5) -> MaskTile:
    """1 where p >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    data = p.data if isinstance(p, ProbMap) else np.asarray(p, dtype=np.float64)
    return MaskTile((data >= threshold).astype(np.uint8))


def confusion(pred, gt) -> ConfusionCounts:
    p, g = _mask(pred).astype(bool), _mask(gt).astype(bool)
    if p.shape != g.shape:
        raise RasterError(f"prediction {p.shape} and ground truth {g.shape} differ in shape")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, p.size - tp - fp - fn, fp, fn)


def _ratio(num: float, den: float, name: str, undefined: set) -> float:
    if den == 0:
        undefined.add(name)
        return 0.0
    return num / den


def metrics(c: ConfusionCounts) -> MetricReport:
    """Accuracy, precision, recall, F1, branching/miss factors and IoU.

    A metric with a zero denominator is reported as 0 and listed in
    ``undefined``. IoU is a fraction in [0, 1].
    """
    if c.total <= 0:
        raise ValueError("confusion counts are empty")
    und: set = set()
    acc = _ratio(c.tp + c.tn, c.total, "accuracy", und)
    prec = _ratio(c.tp, c.tp + c.fp, "precision", und)
    rec = _ratio(c.tp, c.tp + c.fn, "recall", und)
    if "precision" in und or "recall" in und:
        f1 = _ratio(0, 0, "f1", und)
    else:
        f1 = _ratio(2 * prec * rec, prec + rec, "f1", und)
    bf = _ratio(c.fp, c.tp, "branching_factor", und)
    mf = _ratio(c.fn, c.tp, "miss_factor", und)
    iou = _ratio(c.tp, c.tp + c.fn + c.fp, "iou", und)
    return MetricReport(acc, prec, rec, f1, bf, mf, iou, frozenset(und))


def confusion_map(pred, gt) -> Tile:
    p, g = _mask(pred).astype(bool), _mask(gt).astype(bool)
    if p.shape != g.shape:
        raise RasterError(f"prediction {p.shape} and ground truth {g.shape} differ in shape")
    rgb = np.zeros(p.shape + (3,), dtype=np.float64)
    for key, sel in (("tp", p & g), ("fp", p & ~g), ("fn", ~p & g)):
        rgb[sel] = COLORS[key]
    return Tile.from_array(rgb, names=("R", "G", "B"))


MEAN, POOLED = "mean-of-metrics", "pooled-counts"


def aggregate(reports: Iterable[tuple[str, ConfusionCounts]], mode: str = MEAN) -> "OrderedDict[str, MetricReport]":
    """Per-group reports, groups ordered by key.

    ``mean-of-metrics`` averages each image's metrics; a metric is flagged
    undefined for the group only if it was undefined for every image.
    ``pooled-counts`` sums the counts and evaluates once.
    """
    if mode not in (MEAN, POOLED):
        raise ValueError(f"mode must be {MEAN!r} or {POOLED!r}")
    groups: dict[str, list[ConfusionCounts]] = {}
    for key, c in reports:
        groups.setdefault(key, []).append(c)
    out = OrderedDict()
    for key in sorted(groups):
        counts = groups[key]
        if not counts:
            raise ValueError(f"group {key!r} is empty")
        if mode == POOLED:
            total = ConfusionCounts()
            for c in counts:
                total = total + c
            out[key] = metrics(total)
            continue
        reps = [metrics(c) for c in counts]
        vals = {m: math.fsum(getattr(r, m) for r in reps) / len(reps) for m in METRICS}
        und = frozenset(m for m in METRICS if all(m in r.undefined for r in reps))
        out[key] = MetricReport(**vals, undefined=und)
    return out


CSV_FIELDS = ("id", "group", "tp", "tn", "fp", "fn", "accuracy", "precision", "recall", "f1", "bf", "mf", "iou")


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def metric_row(ident: str, group: str, c: ConfusionCounts, r: MetricReport) -> list[str]:
    return [ident, group, str(c.tp), str(c.tn), str(c.fp), str(c.fn),
            *(_fmt(getattr(r, m)) for m in METRICS)]


def write_metrics_csv(path, rows: Iterable[list[str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        w.writerows(rows)
