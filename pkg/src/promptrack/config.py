"""Run configuration: sectioned key-value files with command-line overrides.

Every section is a dataclass; unknown sections or keys are rejected with the
offending name so typos never pass silently. ``config_hash`` is a short
stable digest of the full configuration and is embedded into checkpoints,
result files and reports.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, get_type_hints


class ConfigError(ValueError):
    pass


@dataclass
class EncoderConfig:
    name: str = "toy"
    input_resolution: int = 72
    cell_size: int = 6
    channels: int = 32
    pool_to: str = ""  # "HxW" or empty
    seed: int = 0
    embed_resolution: int = 24


@dataclass
class ModelConfig:
    enc_layers: int = 2
    dec_layers: int = 1
    seed: int = 0


@dataclass
class TprSection:
    tau: float = 0.05
    gamma: float = 0.25
    max_candidates: int = 4


@dataclass
class LossConfig:
    lambda_cls: float = 100.0
    lambda_can: float = 10.0
    lambda_reg: float = 1.0
    fg_threshold: float = 0.25
    sigma_factor: float = 0.0625


@dataclass
class TrainConfig:
    stage1_epochs: int = 10
    stage2_epochs: int = 6
    samples_per_epoch: int = 2000
    batch_size: int = 16
    stage1_lr: float = 1e-3
    stage1_decay_at: str = "0.5,0.833"  # fractions of stage-1 epochs
    stage1_decay: float = 0.2
    stage2_prompt_lr: float = 5e-3
    stage2_tracker_lr: float = 4e-6
    stage2_decay_last: float = 0.25  # fraction of stage-2 epochs
    stage2_decay: float = 0.2
    weight_decay: float = 1e-4
    window: int = 200
    ref_jitter: float = 0.25
    cur_jitter: float = 1.5
    scale_jitter: float = 0.15
    flip_prob: float = 0.5
    color_jitter: float = 0.1
    stills_fraction: float = 0.3
    train_sequences: int = 40
    seed: int = 0


@dataclass
class TrackConfig:
    search_scale: float = 5.0
    update_threshold: float = 0.5
    update_min_gap: int = 5
    use_prompt: bool = True
    use_tpr: bool = True


@dataclass
class DataConfig:
    suite_seed: int = 2024
    sequences_per_suite: int = 20
    frames: int = 60
    canvas: int = 160


@dataclass
class EvalConfig:
    success_points: int = 101
    precision_max: float = 50.0
    precision_points: int = 51
    norm_precision_max: float = 0.5
    norm_precision_points: int = 51
    absent_conf_threshold: float = 0.5
    workers: int = 1


@dataclass
class RunConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    tpr: TprSection = field(default_factory=TprSection)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    track: TrackConfig = field(default_factory=TrackConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict[str, dict[str, Any]]:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def set(self, dotted: str, value: str) -> None:
        """Apply a ``section.key=value`` override given as strings."""
        if "." not in dotted:
            raise ConfigError(f"override key must be section.key: {dotted!r}")
        section_name, key = dotted.split(".", 1)
        section = getattr(self, section_name, None)
        if section is None or not dataclasses.is_dataclass(section):
            raise ConfigError(f"unknown config section: {section_name!r}")
        hints = get_type_hints(type(section))
        if key not in hints:
            raise ConfigError(f"unknown config key: {section_name}.{key}")
        setattr(section, key, _coerce(hints[key], value, f"{section_name}.{key}"))

    def dump(self) -> str:
        lines = []
        for name, sec in self.to_dict().items():
            lines.append(f"[{name}]")
            lines.extend(f"{k} = {_fmt(v)}" for k, v in sec.items())
            lines.append("")
        return "\n".join(lines)


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(tp: Any, raw: str, name: str) -> Any:
    try:
        if tp is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        return str(raw).strip()
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        with open(path) as fh:
            parser.read_file(fh)
        for section in parser.sections():
            for key, value in parser.items(section):
                cfg.set(f"{section}.{key}", value)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        k, v = item.split("=", 1)
        cfg.set(k.strip(), v)
    return cfg


def config_from_dict(d: dict[str, dict[str, Any]]) -> RunConfig:
    cfg = RunConfig()
    for section, values in d.items():
        for key, value in values.items():
            cfg.set(f"{section}.{key}", _fmt(value))
    return cfg


def parse_fractions(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def parse_pool(s: str) -> tuple[int, int] | None:
    if not s:
        return None
    h, w = s.lower().split("x")
    return int(h), int(w)
