"""Losses, learning-rate schedules and the frozen -> unfrozen training loop."""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import torch

from .evaluation import confusion, metrics
from .network import FROZEN, UNFROZEN, SegModel, building_probability, set_frozen
from .raster import MaskTile, ProbMap

log = logging.getLogger(__name__)

DICE_SMOOTH = 1e-7
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, epoch: int, step: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, step {step}")
        self.epoch, self.step, self.value = epoch, step, value


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0
    epsilon: float = 1e-7
    kind: str = "combo"  # combo | bce | dice

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0 < self.epsilon < 0.5:
            raise ValueError("epsilon must be in (0, 0.5)")
        if self.kind not in ("combo", "bce", "dice"):
            raise ValueError(f"loss kind must be combo, bce or dice, got {self.kind!r}")


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    if isinstance(x, (ProbMap, MaskTile)):
        x = x.data
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def _pair(p, g):
    p, g = _as_tensor(p), _as_tensor(g).to(_as_tensor(p).dtype)
    if p.shape != g.shape:
        raise ValueError(f"prediction {tuple(p.shape)} and target {tuple(g.shape)} differ in shape")
    return p, g


def _per_sample(t: torch.Tensor) -> torch.Tensor:
    # (H, W) -> (1, H*W); (N, H, W) -> (N, H*W)
    return t.reshape(1, -1) if t.ndim <= 2 else t.reshape(t.shape[0], -1)


def bce_loss(p, g, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """Mean binary cross-entropy over pixels, probabilities clamped to [eps, 1 - eps]."""
    p, g = _pair(p, g)
    p = p.clamp(cfg.epsilon, 1.0 - cfg.epsilon)
    return -(g * torch.log(p) + (1.0 - g) * torch.log1p(-p)).mean()


def dice_loss(p, g, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """1 - (2 sum(pg) + s) / (sum(p^2) + sum(g^2) + s), averaged over samples."""
    p, g = _pair(p, g)
    p, g = _per_sample(p), _per_sample(g)
    num = 2.0 * (p * g).sum(dim=1) + DICE_SMOOTH
    den = (p * p).sum(dim=1) + (g * g).sum(dim=1) + DICE_SMOOTH
    return (1.0 - num / den).mean()


def combo_loss(p, g, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    return bce_loss(p, g, cfg) + cfg.alpha * dice_loss(p, g, cfg)


LOSSES = {"combo": combo_loss, "bce": bce_loss, "dice": dice_loss}


def loss_fn(cfg: LossConfig) -> Callable:
    return LOSSES[cfg.kind]


# -- schedules ---------------------------------------------------------------

TRIANGULAR, ONE_CYCLE, CONSTANT = "triangular-clr", "one-cycle", "constant"


@dataclass(frozen=True)
class SchedulePolicy:
    """Learning-rate policy.

    ``cycle_length`` of None takes its length from ``cycle_unit``: one epoch
    or one whole training phase. ``constant`` holds ``lr_max`` and exists
    for the conventional-training baseline.
    """
    kind: str = TRIANGULAR
    lr_min: float = 1e-4
    lr_max: float = 1e-3
    cycle_length: int | None = None
    momentum_range: tuple[float, float] | None = None  # (high, low) for beta1
    cycle_unit: str = "epoch"  # epoch | phase

    def __post_init__(self):
        if self.kind not in (TRIANGULAR, ONE_CYCLE, CONSTANT):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not 0 < self.lr_min <= self.lr_max:
            raise ValueError("need 0 < lr_min <= lr_max")
        if self.cycle_length is not None and self.cycle_length < 2:
            raise ValueError("cycle_length must be >= 2")
        if self.cycle_unit not in ("epoch", "phase"):
            raise ValueError(f"cycle_unit must be 'epoch' or 'phase', got {self.cycle_unit!r}")

    def with_cycle(self, steps: int) -> "SchedulePolicy":
        if self.cycle_length is not None:
            return self
        return replace(self, cycle_length=max(2, steps))


def _cycle_fraction(pol: SchedulePolicy, step: int) -> float:
    """Position in [0, 1] along the up-ramp (0 at ends, 1 at half cycle)."""
    L = pol.cycle_length
    x = step % L
    return 2 * x / L if 2 * x <= L else 2 * (L - x) / L


def schedule_lr(pol: SchedulePolicy, step: int) -> float:
    if step < 0:
        raise ValueError("step must be >= 0")
    if pol.kind == CONSTANT:
        return pol.lr_max
    if pol.cycle_length is None:
        raise ValueError("cycle_length is unset; call with_cycle(steps_per_epoch) first")
    span = pol.lr_max - pol.lr_min
    if pol.kind == TRIANGULAR:
        return pol.lr_min + span * _cycle_fraction(pol, step)
    # one-cycle: up to lr_max at half cycle, then down to lr_min / 10, then flat
    L = pol.cycle_length
    if 2 * step <= L:
        return pol.lr_min + span * (2 * step / L)
    floor = pol.lr_min / 10.0
    if step >= L:
        return floor
    return pol.lr_max - (pol.lr_max - floor) * ((2 * step - L) / L)


def schedule_momentum(pol: SchedulePolicy, step: int) -> float | None:
    """beta1 moving opposite to the learning rate, or None if not configured."""
    if pol.momentum_range is None or pol.kind == CONSTANT:
        return None
    hi, lo = pol.momentum_range
    lr = schedule_lr(pol, step)
    span = pol.lr_max - pol.lr_min
    frac = min(max((lr - pol.lr_min) / span, 0.0), 1.0) if span > 0 else 0.0
    return hi - (hi - lo) * frac


# -- training loop -----------------------------------------------------------


@dataclass(frozen=True)
class TrainPolicy:
    frozen_epochs: int = 15
    unfrozen_epochs: int = 15
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    fallback: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.frozen_epochs < 0 or self.unfrozen_epochs < 0 or self.frozen_epochs + self.unfrozen_epochs < 1:
            raise ValueError("need at least one training epoch")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def phases(self):
        return ((FROZEN, self.frozen_epochs), (UNFROZEN, self.unfrozen_epochs))


@dataclass
class TileSet:
    """In-memory (N, 3, H, W) images and (N, H, W) binary masks."""
    images: np.ndarray
    masks: np.ndarray
    ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.masks = np.asarray(self.masks, dtype=np.float32)
        if self.images.ndim != 4 or self.masks.shape != (self.images.shape[0],) + self.images.shape[2:]:
            raise ValueError(f"images {self.images.shape} and masks {self.masks.shape} do not pair up")
        if not self.ids:
            self.ids = [str(i) for i in range(len(self))]

    def __len__(self):
        return self.images.shape[0]


def prepare_images(rgb255: np.ndarray) -> np.ndarray:
    """Scale 8-bit (N, 3, H, W) composites to [0, 1] and standardise with ImageNet statistics."""
    x = np.asarray(rgb255, dtype=np.float32) / 255.0
    mean = np.asarray(IMAGENET_MEAN, dtype=np.float32)[:, None, None]
    std = np.asarray(IMAGENET_STD, dtype=np.float32)[:, None, None]
    return (x - mean) / std


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    train_loss: float
    val_loss: float
    val_iou: float
    lr_first: float
    lr_last: float
    fellback: bool


HISTORY_FIELDS = ("epoch", "phase", "train_loss", "val_loss", "val_iou", "lr_first", "lr_last", "fellback")


def write_history_csv(history: Sequence[EpochRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for r in history:
            w.writerow([r.epoch, r.phase, repr(r.train_loss), repr(r.val_loss), repr(r.val_iou),
                        repr(r.lr_first), repr(r.lr_last), int(r.fellback)])


@torch.no_grad()
def predict_proba(model: SegModel, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Building probabilities (N, H, W) for prepared images."""
    was_training = model.training
    model.eval()
    out = []
    for i in range(0, len(images), batch_size):
        x = torch.from_numpy(np.ascontiguousarray(images[i:i + batch_size]))
        out.append(building_probability(model(x)).numpy())
    model.train(was_training)
    return np.concatenate(out, axis=0)


def evaluate_set(model: SegModel, data: TileSet, loss: LossConfig = LossConfig(),
                 threshold: float = 0.5, batch_size: int = 8) -> tuple[float, float]:
    """(combo loss, pooled IoU) of a model on a tile set."""
    p = predict_proba(model, data.images, batch_size)
    val_loss = float(combo_loss(torch.from_numpy(p).double(), torch.from_numpy(data.masks).double(),
                                LossConfig(alpha=loss.alpha, epsilon=loss.epsilon)))
    total = None
    for pi, gi in zip(p, data.masks):
        c = confusion(pi >= threshold, gi.astype(bool))
        total = c if total is None else total + c
    return val_loss, metrics(total).iou


def _snapshot(model: SegModel) -> dict:
    return copy.deepcopy(model.state_dict())


def train(model: SegModel, train_set: TileSet, val_set: TileSet,
          policy: TrainPolicy = TrainPolicy(), schedule: SchedulePolicy = SchedulePolicy(),
          loss: LossConfig = LossConfig(),
          evaluate_fn: Callable[[SegModel], tuple[float, float]] | None = None,
          on_epoch: Callable[[EpochRecord, SegModel], None] | None = None):
    """Two-phase training with per-epoch fallback to the best weights.

    Phase one trains only the head (``frozen``), phase two trains every
    group. After each epoch the validation combo loss is compared with the
    best so far; anything not strictly better restores the best weights
    and optimiser state before the next epoch. Returns the best model and
    the per-epoch history.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    torch.manual_seed(policy.seed)
    rng = np.random.default_rng(policy.seed)
    steps_per_epoch = math.ceil(len(train_set) / policy.batch_size)
    base_schedule = schedule
    objective = loss_fn(loss)
    evaluate_fn = evaluate_fn or (lambda m: evaluate_set(m, val_set, loss, batch_size=policy.batch_size))

    history: list[EpochRecord] = []
    best_val, best_state, best_opt = math.inf, _snapshot(model), None
    epoch = 0
    for phase, n_epochs in policy.phases():
        if n_epochs == 0:
            continue
        set_frozen(model, phase)
        unit = steps_per_epoch * (n_epochs if base_schedule.cycle_unit == "phase" else 1)
        schedule = base_schedule.with_cycle(unit)
        params = [p for p in model.parameters() if p.requires_grad]
        opt = torch.optim.Adam(params, lr=schedule.lr_min, betas=(policy.beta1, policy.beta2),
                               eps=policy.adam_eps)
        best_opt = None  # optimiser state from an earlier phase does not transfer
        step = 0
        for _ in range(n_epochs):
            epoch += 1
            model.train()
            order = rng.permutation(len(train_set))
            losses, lrs = [], []
            for b in range(steps_per_epoch):
                idx = np.sort(order[b * policy.batch_size:(b + 1) * policy.batch_size])
                x = torch.from_numpy(train_set.images[idx])
                y = torch.from_numpy(train_set.masks[idx])
                lr = schedule_lr(schedule, step)
                beta1 = schedule_momentum(schedule, step)
                for g in opt.param_groups:
                    g["lr"] = lr
                    if beta1 is not None:
                        g["betas"] = (beta1, policy.beta2)
                prob = building_probability(model(x))
                value = objective(prob, y, loss)
                if not torch.isfinite(value):
                    raise NonFiniteLossError(epoch, step, float(value.detach()))
                opt.zero_grad(set_to_none=True)
                value.backward()
                opt.step()
                losses.append(float(value.detach()))
                lrs.append(lr)
                step += 1
            val_loss, val_iou = evaluate_fn(model)
            if not math.isfinite(val_loss):
                raise NonFiniteLossError(epoch, step, val_loss)
            fellback = False
            if val_loss < best_val:
                best_val, best_state = val_loss, _snapshot(model)
                best_opt = copy.deepcopy(opt.state_dict())
            elif policy.fallback:
                model.load_state_dict(best_state)
                if best_opt is not None:
                    opt.load_state_dict(best_opt)
                else:
                    opt = torch.optim.Adam(params, lr=schedule.lr_min, betas=(policy.beta1, policy.beta2),
                                           eps=policy.adam_eps)
                fellback = True
            rec = EpochRecord(epoch, phase, float(np.mean(losses)), float(val_loss), float(val_iou),
                              lrs[0], lrs[-1], fellback)
            history.append(rec)
            log.info("epoch %d %s train=%.4f val=%.4f iou=%.3f%s", epoch, phase, rec.train_loss,
                     val_loss, val_iou, " (fallback)" if fellback else "")
            if on_epoch is not None:
                on_epoch(rec, model)
    model.load_state_dict(best_state)
    return model, history
