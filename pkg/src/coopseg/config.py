"""Run configuration: a flat dataclass, a `key = value` file parser, and
typed override merging (file values first, then CLI flags).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # geometry
    image_size: int = 352
    patch_size: int = 16
    # transformer encoder
    depth: int = 12
    d_model: int = 384
    heads: int = 6
    mlp_ratio: float = 4.0
    # cnn encoder
    stem_channels: int = 32
    stage_units: int = 3
    c4: int = 64
    c8: int = 128
    c16: int = 256
    # fusion
    glff_on: bool = True
    dfm_on: bool = True
    cbam_reduction: int = 16
    # training
    lr: float = 7e-5
    lam: float = 1.0  # config key: lambda
    epochs: int = 200
    batch_size: int = 4
    seed: int = 0
    early_stop_patience: int = 0  # 0 disables the plateau stop
    # data / io
    data_dir: str = ""
    out_dir: str = "runs"
    synth_samples: int = 8
    dtype: str = "float32"
    eval_view: str = "fused"  # fused | transformer | cnn | fusion

    def validate(self) -> "RunConfig":
        if self.image_size % 16 or self.image_size % self.patch_size:
            raise ConfigError(
                f"image_size {self.image_size} must be divisible by 16 and by "
                f"patch_size {self.patch_size}"
            )
        if self.lam <= 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.eval_view not in ("fused", "transformer", "cnn", "fusion"):
            raise ConfigError(f"unknown eval_view {self.eval_view!r}")
        return self


# the 'lambda' keyword cannot be a field name; map it explicitly
_KEY_TO_FIELD = {"lambda": "lam"}
_FIELD_TO_KEY = {v: k for k, v in _KEY_TO_FIELD.items()}


def toy_config(**overrides) -> RunConfig:
    """Desk-scale preset: small encoder, 64px images, synthetic data."""
    base = dict(
        image_size=64, depth=2, d_model=96, heads=6, stem_channels=16,
        stage_units=2, c4=32, c8=64, c16=128, batch_size=8, epochs=10,
        lr=2e-4, synth_samples=8,
    )
    base.update(overrides)
    return RunConfig(**base).validate()


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Read flat `key = value` lines; '#' starts a comment anywhere."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        values[key] = value
    return values


def _coerce(field: dataclasses.Field, key: str, text: str):
    if field.type in ("int", int):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"config key {key!r}: expected integer, got {text!r}") from None
    if field.type in ("float", float):
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"config key {key!r}: expected number, got {text!r}") from None
    if field.type in ("bool", bool):
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"config key {key!r}: expected boolean, got {text!r}")
    return text


def build_config(file_values: dict[str, str] | None = None, **overrides) -> RunConfig:
    """Merge file values then keyword overrides onto the defaults."""
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    merged: dict = {}
    for key, text in (file_values or {}).items():
        name = _KEY_TO_FIELD.get(key, key)
        if name not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        merged[name] = _coerce(fields[name], key, text)
    for name, value in overrides.items():
        if value is None:
            continue
        if name not in fields:
            raise ConfigError(f"unknown config override {name!r}")
        merged[name] = value
    return RunConfig(**merged).validate()


def config_lines(cfg: RunConfig) -> list[str]:
    """Render a config back to parseable `key = value` lines."""
    lines = []
    for f in dataclasses.fields(RunConfig):
        key = _FIELD_TO_KEY.get(f.name, f.name)
        lines.append(f"{key} = {getattr(cfg, f.name)}")
    return lines
