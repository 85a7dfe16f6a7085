"""Flat ``key = value`` run configuration with baseline defaults."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .model import RSNetConfig
from .pipeline import BlockConfig
from .rnn import RnnStackConfig


@dataclass
class RunConfig:
    # sliding-window protocol
    block_size: float = 1.0
    train_stride: float = 1.0
    test_stride: float = 1.0
    points_per_cube: int = 4096
    feature_mode: str = "full9"
    resample_each_epoch: bool = True
    # architecture
    num_classes: int = 6
    input_channels: tuple = (64, 64, 64)
    output_channels: tuple = (512, 256)
    rnn_hidden: tuple = (256, 128, 64, 64, 128, 256)
    rnn_unit: str = "gru"
    resolution_x: float = 0.02
    resolution_y: float = 0.02
    resolution_z: float = 0.02
    ablate_rnn: bool = False
    # loss and optimiser
    class_weighting: str = "none"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    epochs: int = 30
    seed: int = 0
    eval_seed: int = 0
    # data
    train_data: str = ""
    test_data: str = ""
    checkpoint: str = "rsnet.ckpt"
    synth_task: str = "room"
    synth_train_scenes: int = 8
    synth_test_scenes: int = 2
    synth_points: int = 20000
    synth_seed: int = 0

    def __post_init__(self):
        if self.class_weighting not in ("none", "median"):
            raise ConfigError(f"class_weighting must be 'none' or 'median', got {self.class_weighting!r}")
        if self.synth_task not in ("room", "context"):
            raise ConfigError(f"synth_task must be 'room' or 'context', got {self.synth_task!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        # constructing the sub-configs validates the remaining fields
        self.block_config()
        self.model_config()

    # -- derived configs -----------------------------------------------------

    def block_config(self) -> BlockConfig:
        return BlockConfig(
            block_size_xy=self.block_size,
            train_stride=self.train_stride,
            test_stride=self.test_stride,
            points_per_cube=self.points_per_cube,
            feature_mode=self.feature_mode,
            resample_each_epoch=self.resample_each_epoch,
        )

    def model_config(self) -> RSNetConfig:
        return RSNetConfig(
            num_classes=self.num_classes,
            d_in=3 if self.feature_mode == "xyz3" else 9,
            input_channels=tuple(self.input_channels),
            output_channels=tuple(self.output_channels),
            rnn=RnnStackConfig(tuple(self.rnn_hidden), self.rnn_unit),
            resolutions=(self.resolution_x, self.resolution_y, self.resolution_z),
            ablate_rnn=self.ablate_rnn,
        )

    # -- text form ----------------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, overrides=()) -> "RunConfig":
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"config line {lineno}: expected 'key = value', got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override must be key=value, got {item!r}")
            key, value = (s.strip() for s in item.split("=", 1))
            values[key] = value
        return cls.from_dict(values)

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            default = known[key].default
            kwargs[key] = _coerce(key, raw, default)
        return cls(**kwargs)

    @classmethod
    def load(cls, path, overrides=()) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text, overrides)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _coerce(key, raw, default):
    if not isinstance(raw, str):
        return tuple(raw) if isinstance(default, tuple) else raw
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw
