"""Pipeline configuration: one TOML file, one section per stage."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .curation import CurationConfig
from .features import CompositeSpec, MbiParams
from .network import ModelConfig
from .training import LossConfig, SchedulePolicy, TrainPolicy


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    threshold: float = 0.5
    aggregate: str = "mean-of-metrics"

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must be in (0, 1)")
        if self.aggregate not in ("mean-of-metrics", "pooled-counts"):
            raise ValueError("aggregate must be mean-of-metrics or pooled-counts")


@dataclass
class PipelineConfig:
    seed: int = 0
    curation: CurationConfig = field(default_factory=CurationConfig)
    mbi: MbiParams = field(default_factory=MbiParams)
    composite: CompositeSpec = field(default_factory=CompositeSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainPolicy = field(default_factory=TrainPolicy)
    schedule: SchedulePolicy = field(default_factory=SchedulePolicy)
    loss: LossConfig = field(default_factory=LossConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def validate(self, for_training: bool = False) -> None:
        ts = self.curation.tile_size
        if for_training and ts % 32:
            raise ConfigError(f"tile_size {ts} must be divisible by 32 for training")
        if for_training and tuple(self.model.input_size) != (ts, ts):
            raise ConfigError(f"model.input_size {self.model.input_size} does not match tile_size {ts}")

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(self, seed=seed,
                       curation=replace(self.curation, seed=seed),
                       model=replace(self.model, seed=seed),
                       train=replace(self.train, seed=seed))


SECTIONS = {
    "curation": CurationConfig,
    "mbi": MbiParams,
    "model": ModelConfig,
    "train": TrainPolicy,
    "schedule": SchedulePolicy,
    "loss": LossConfig,
    "evaluation": EvalConfig,
}


def _build(cls, section: str, values: dict):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {', '.join(unknown)}")
    vals = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**vals)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def from_dict(data: dict) -> PipelineConfig:
    data = dict(data)
    top_seed = data.pop("seed", None)
    composite = data.pop("composite", None)
    for name, values in data.items():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        if not isinstance(values, dict):
            raise ConfigError(f"[{name}] must be a table")
    # the network input follows the tile size unless set explicitly
    ts = data.get("curation", {}).get("tile_size")
    if isinstance(ts, int) and ts > 0 and ts % 32 == 0 and "input_size" not in data.get("model", {}):
        data["model"] = {**data.get("model", {}), "input_size": [ts, ts]}
    kw = {name: _build(SECTIONS[name], name, values) for name, values in data.items()}
    if composite is not None:
        try:
            kw["composite"] = CompositeSpec(str(composite))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    cfg = PipelineConfig(**kw)
    if top_seed is not None:
        if not isinstance(top_seed, int):
            raise ConfigError("seed must be an integer")
        cfg = cfg.with_seed(top_seed)
    return cfg


def load_config(path=None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        data = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(data)
