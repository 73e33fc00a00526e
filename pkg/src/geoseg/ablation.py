"""Desk-scale ablations: loss comparison and training-policy comparison."""

from __future__ import annotations

import csv
import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evaluation import confusion, metrics
from .network import ModelConfig, build_model, load_pretrained_encoder, save_encoder
from .synthetic import probe_dataset
from .training import (CONSTANT, LossConfig, SchedulePolicy, TileSet, TrainPolicy, evaluate_set,
                       predict_proba, prepare_images, train)

PROBE_WIDTHS = (16, 16, 32, 64, 128)
PROBE_BLOCKS = (1, 1, 1, 1)


def probe_tileset(n: int = 8, size: int = 64, seed: int = 0) -> TileSet:
    imgs, masks = probe_dataset(n, size, seed)
    return TileSet(prepare_images(imgs.transpose(0, 3, 1, 2)), masks, [f"probe{i}" for i in range(n)])


def probe_model(size: int = 64, seed: int = 0, widths=PROBE_WIDTHS, blocks=PROBE_BLOCKS):
    return build_model(ModelConfig(input_size=(size, size), encoder_widths=widths,
                                   encoder_blocks_per_stage=blocks, seed=seed))


def per_image_iou(model, data: TileSet, threshold: float = 0.5) -> list[float]:
    p = predict_proba(model, data.images)
    return [metrics(confusion(pi >= threshold, gi.astype(bool))).iou for pi, gi in zip(p, data.masks)]


@dataclass
class ProbeResult:
    loss: str
    ious: list[float]
    history: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def mean_iou(self) -> float:
        return float(np.mean(self.ious))

    @property
    def pooled_iou(self) -> float:
        return self.history[-1].val_iou if self.history else math.nan


def overfit_probe(loss_kind: str = "combo", steps: int = 200, batch_size: int = 4, seed: int = 0,
                  data: TileSet | None = None, model_cfg: dict | None = None) -> ProbeResult:
    """Train all layers on the probe tiles for ``steps`` optimiser steps and score on the same tiles."""
    data = data or probe_tileset(seed=seed)
    model = probe_model(size=data.images.shape[-1], seed=seed, **(model_cfg or {}))
    steps_per_epoch = math.ceil(len(data) / batch_size)
    epochs = max(1, steps // steps_per_epoch)
    t0 = time.perf_counter()
    model, hist = train(model, data, data,
                        TrainPolicy(frozen_epochs=0, unfrozen_epochs=epochs, batch_size=batch_size, seed=seed),
                        SchedulePolicy(cycle_length=20), LossConfig(kind=loss_kind))
    return ProbeResult(loss_kind, per_image_iou(model, data), hist, time.perf_counter() - t0)


def loss_ablation(steps: int = 200, seed: int = 0) -> dict[str, ProbeResult]:
    """Combo vs BCE-only vs Dice-only on the probe set."""
    data = probe_tileset(seed=seed)
    return {k: overfit_probe(k, steps, seed=seed, data=data) for k in ("combo", "bce", "dice")}


def write_loss_ablation_csv(results: dict[str, ProbeResult], path) -> None:
    ids = None
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        kinds = list(results)
        ids = list(range(len(next(iter(results.values())).ious)))
        w.writerow(["image", *(f"{k}_iou" for k in kinds)])
        for i in ids:
            w.writerow([i, *(f"{results[k].ious[i]:.6f}" for k in kinds)])
        w.writerow(["mean", *(f"{results[k].mean_iou:.6f}" for k in kinds)])


@dataclass
class PolicyResult:
    name: str
    history: list
    seconds: float

    @property
    def val_losses(self) -> list[float]:
        return [r.val_loss for r in self.history]


# conventional: every layer trainable, fixed Adam rate, no cycling, no fallback
CONVENTIONAL = dict(policy=TrainPolicy(frozen_epochs=0, unfrozen_epochs=30, fallback=False),
                    schedule=SchedulePolicy(kind=CONSTANT, lr_min=1e-3, lr_max=1e-3))
PROPOSED = dict(policy=TrainPolicy(frozen_epochs=5, unfrozen_epochs=10),
                schedule=SchedulePolicy())


PRETRAIN_SEED_OFFSET = 1000


def pretrain_encoder(path, size: int = 64, n: int = 16, epochs: int = 20, seed: int = 0) -> None:
    """Stand-in for ImageNet weights: train a probe model on a disjoint synthetic corpus
    and export its encoder as a named-tensor archive."""
    src = probe_tileset(n=n, size=size, seed=seed + PRETRAIN_SEED_OFFSET)
    model = probe_model(size=size, seed=seed + PRETRAIN_SEED_OFFSET)
    train(model, src, src, TrainPolicy(frozen_epochs=0, unfrozen_epochs=epochs, batch_size=4,
                                       fallback=False, seed=seed),
          SchedulePolicy(kind=CONSTANT, lr_min=1e-3, lr_max=1e-3), LossConfig())
    save_encoder(model, path)


def _run_policy(name, policy: TrainPolicy, schedule: SchedulePolicy, data: TileSet, seed: int,
                batch_size: int, encoder=None) -> PolicyResult:
    model = probe_model(size=data.images.shape[-1], seed=seed)
    if encoder is not None:
        load_pretrained_encoder(model, encoder)
    policy = TrainPolicy(policy.frozen_epochs, policy.unfrozen_epochs, policy.beta1, policy.beta2,
                         policy.adam_eps, batch_size, policy.fallback, seed)
    t0 = time.perf_counter()
    seen: list = []
    train(model, data, data, policy, schedule, LossConfig(), on_epoch=lambda r, m: seen.append(r))
    return PolicyResult(name, seen, time.perf_counter() - t0)


def policy_ablation(seed: int = 0, batch_size: int = 2, conventional=CONVENTIONAL, proposed=PROPOSED,
                    workdir=None):
    """Run both policies on the probe set; returns (conventional, proposed, epochs_to_match).

    Both start from the same encoder, pretrained on a disjoint synthetic
    corpus. ``epochs_to_match`` is the first proposed epoch whose validation
    combo loss is at or below the conventional policy's final validation
    loss (None if never reached).
    """
    data = probe_tileset(seed=seed)
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        enc = Path(tmp) / "encoder.gst"
        pretrain_encoder(enc, size=data.images.shape[-1], seed=seed)
        conv = _run_policy("conventional", conventional["policy"], conventional["schedule"], data, seed,
                           batch_size, enc)
        prop = _run_policy("proposed", proposed["policy"], proposed["schedule"], data, seed, batch_size, enc)
    target = conv.val_losses[-1]
    match = next((r.epoch for r in prop.history if r.val_loss <= target), None)
    return conv, prop, match


def write_policy_ablation_csv(conv: PolicyResult, prop: PolicyResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["policy", "epoch", "phase", "train_loss", "val_loss", "val_iou", "lr_first", "lr_last"])
        for res in (conv, prop):
            for r in res.history:
                w.writerow([res.name, r.epoch, r.phase, f"{r.train_loss:.6f}", f"{r.val_loss:.6f}",
                            f"{r.val_iou:.6f}", repr(r.lr_first), repr(r.lr_last)])
