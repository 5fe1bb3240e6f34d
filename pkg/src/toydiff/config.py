"""Run configuration: nested dataclasses, strict JSON loading, overrides.

JSON is the primary interface because an edit run couples a dozen fields;
individual keys can still be overridden from the command line with
``--set section.key=value``. Unknown keys are rejected rather than
ignored, and every command writes its resolved configuration next to its
outputs so a run can be replayed exactly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError


@dataclass
class ScheduleConfig:
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass
class ModelConfig:
    hidden_width: int = 256
    time_embed_dim: int = 32


@dataclass
class DatasetConfig:
    count: int = 512
    side: int = 16


@dataclass
class PretrainConfig:
    steps: int = 20000
    lr: float = 1e-3
    batch: int = 32


@dataclass
class EmbedderConfig:
    dim: int = 64
    seed: int = 42


@dataclass
class EditSection:
    """Preset name plus optional field-level overrides."""

    preset: str = "brightness-increase"
    variant: str | None = None
    t0: int | None = None
    tau_enc: int | None = None
    tau_dec: int | None = None
    lam: float | None = None
    lr: float | None = None
    n_iter: int | None = None
    resample_latents: bool = False


@dataclass
class BenchSection:
    runs: int = 5
    images: int = 8
    iters: int = 5
    t0: int = 400
    tau_enc: int = 40
    tau_dec: int = 6
    tau_dec_list: list = field(default_factory=lambda: [2, 4, 6, 8])


@dataclass
class SweepSection:
    t0_fracs: list = field(default_factory=lambda: [0.1, 0.3, 0.5, 0.8])
    tau_enc: int = 40
    tau_dec: int = 6
    seeds: int = 8
    images: int = 64


@dataclass
class RunConfig:
    seed: int = 7
    out_dir: str = "runs/default"
    checkpoint: str | None = None
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    edit: EditSection = field(default_factory=EditSection)
    bench: BenchSection = field(default_factory=BenchSection)
    sweep: SweepSection = field(default_factory=SweepSection)


def _from_dict(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS and isinstance(value, dict):
            kwargs[key] = _from_dict(_SECTIONS[key], value, f"{path}.{key}" if path else key)
        else:
            kwargs[key] = value
    return cls(**kwargs)


_SECTIONS = {
    "schedule": ScheduleConfig,
    "model": ModelConfig,
    "dataset": DatasetConfig,
    "pretrain": PretrainConfig,
    "embedder": EmbedderConfig,
    "edit": EditSection,
    "bench": BenchSection,
    "sweep": SweepSection,
}


def config_from_dict(data: dict) -> RunConfig:
    return _from_dict(RunConfig, data, "")


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    return config_from_dict(data)


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def apply_override(cfg: RunConfig, dotted: str, raw: str) -> None:
    """Apply one ``--set section.key=value`` override in place.

    Values parse as JSON first (numbers, booleans, lists) and fall back
    to plain strings.
    """
    parts = dotted.split(".")
    target = cfg
    for p in parts[:-1]:
        if not dataclasses.is_dataclass(target) or p not in {
            f.name for f in dataclasses.fields(target)
        }:
            raise ConfigError(f"unknown config section {dotted!r}")
        target = getattr(target, p)
    leaf = parts[-1]
    if not dataclasses.is_dataclass(target) or leaf not in {
        f.name for f in dataclasses.fields(target)
    }:
        raise ConfigError(f"unknown config key {dotted!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    setattr(target, leaf, value)


def write_resolved(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
