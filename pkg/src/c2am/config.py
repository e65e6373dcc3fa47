"""Run configuration: flat key = value text file, overridable by CLI flags.

The C2AM_OUT environment variable overrides out_dir when set.
"""

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path


@dataclass
class Config:
    backbone: str = "builtin"  # "builtin" or "features-dir:<path>"
    batch_size: int = 16
    alpha: float = 0.2
    theta: float = 0.5
    lr: float = 1e-3
    momentum: float = 0.9
    epochs: int = 10
    seed: int = 7
    image_size: int = 64
    head_init: str = "kaiming_normal"
    encoder_widths: tuple = (16, 32, 64, 64)
    calibration_size: int = 32
    data_dir: str = ""
    out_dir: str = "runs/default"
    # stub for an optional learned background-cue predictor; "identity" uses
    # the activation-map complement directly
    bg_predictor: str = "identity"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (positive pairs need two images)")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.image_size < 32:
            raise ValueError("image_size must be >= 32")
        if self.bg_predictor != "identity":
            raise NotImplementedError("only the identity background-cue predictor is available")

    def as_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["encoder_widths"] = list(self.encoder_widths)
        return d


_FIELD_TYPES = {f.name: type(f.default) for f in fields(Config) if f.name != "encoder_widths"}


def _parse_value(name: str, raw: str):
    raw = raw.strip()
    if name == "encoder_widths":
        return tuple(int(x) for x in raw.replace(",", " ").split())
    if name not in _FIELD_TYPES:
        raise KeyError(f"unknown config key {name!r}")
    return _FIELD_TYPES[name](raw)


def load_config(path) -> Config:
    """Parse a flat ``key = value`` file ('#' starts a comment)."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        values[key.strip()] = _parse_value(key.strip(), raw)
    return apply_env(Config(**values))


def apply_env(config: Config) -> Config:
    out = os.environ.get("C2AM_OUT")
    return replace(config, out_dir=out) if out else config


def apply_overrides(config: Config, overrides: dict) -> Config:
    """Replace fields with non-None override values (CLI flags win over the file)."""
    updates = {k: v for k, v in overrides.items() if v is not None}
    if "encoder_widths" in updates and isinstance(updates["encoder_widths"], str):
        updates["encoder_widths"] = tuple(int(x) for x in updates["encoder_widths"].replace(",", " ").split())
    return replace(config, **updates)


def write_config(config: Config, path) -> None:
    lines = []
    for name, value in config.as_dict().items():
        if name == "encoder_widths":
            value = " ".join(str(v) for v in value)
        lines.append(f"{name} = {value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
