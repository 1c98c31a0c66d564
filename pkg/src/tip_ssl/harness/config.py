"""Flat ``key = value`` run configuration.

One file carries the model, pre-training, fine-tuning and synthetic-data
settings. Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..data import SynthConfig
from ..model import ModelConfig
from ..ssl import PretrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FinetuneConfig:
    mode: str = "linear_probe"  # or "full"
    lr: float = 3e-3
    epochs: int = 100
    batch_size: int = 128
    patience: int = 10
    min_delta: float = 2e-4
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("linear_probe", "full"):
            raise ConfigError(f"unknown fine-tuning mode {self.mode!r}")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        if self.synth.image_size != self.model.vision.image_size:
            raise ConfigError(
                f"synth_image_size {self.synth.image_size} != image_size {self.model.vision.image_size}")

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(
            self,
            pretrain=replace(self.pretrain, seed=seed),
            finetune=replace(self.finetune, seed=seed),
            synth=replace(self.synth, seed=seed),
        )

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in sorted(flatten(self).items()))

    def digest(self) -> str:
        return config_digest(self.to_text())


# flat key -> (section, attribute)
_SECTIONS = {
    "model": [f.name for f in fields(ModelConfig) if f.name != "vision"],
    "pretrain": [f.name for f in fields(PretrainConfig)],
    "finetune": [f.name for f in fields(FinetuneConfig)],
    "synth": [f.name for f in fields(SynthConfig)],
}
_VISION_KEYS = {"image_size": "image_size", "vision_widths": "widths", "vision_strides": "strides"}


def _key(section: str, name: str) -> str:
    if section == "model":
        return name
    if section == "pretrain":
        return name
    return f"{'ft' if section == 'finetune' else 'synth'}_{name}"


def known_keys() -> list[str]:
    keys = [_key(s, n) for s, names in _SECTIONS.items() for n in names]
    return sorted(keys + list(_VISION_KEYS))


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def flatten(cfg: RunConfig) -> dict[str, str]:
    out = {}
    for section, names in _SECTIONS.items():
        obj = getattr(cfg, section)
        for n in names:
            out[_key(section, n)] = _fmt(getattr(obj, n))
    for key, attr in _VISION_KEYS.items():
        out[key] = _fmt(getattr(cfg.model.vision, attr))
    return out


def _coerce(raw: str, like):
    try:
        if isinstance(like, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
    except ValueError as e:
        raise ConfigError(f"cannot parse {raw!r}: {e}") from None
    return raw


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines (``#`` comments allowed) on top of ``base``."""
    base = base or RunConfig()
    updates: dict[str, dict] = {s: {} for s in _SECTIONS}
    vision: dict = {}
    lookup = {_key(s, n): (s, n) for s, names in _SECTIONS.items() for n in names}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in _VISION_KEYS:
            attr = _VISION_KEYS[key]
            vision[attr] = _coerce(raw, getattr(base.model.vision, attr))
        elif key in lookup:
            section, name = lookup[key]
            updates[section][name] = _coerce(raw, getattr(getattr(base, section), name))
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    # one image size drives both the generator and the encoder unless both are given
    if "image_size" in vision and "image_size" not in updates["synth"]:
        updates["synth"]["image_size"] = vision["image_size"]
    elif "image_size" in updates["synth"] and "image_size" not in vision:
        vision["image_size"] = updates["synth"]["image_size"]
    try:
        vis = replace(base.model.vision, **vision)
        model = replace(base.model, vision=vis, **updates["model"])
        return RunConfig(
            model=model,
            pretrain=replace(base.pretrain, **updates["pretrain"]),
            finetune=replace(base.finetune, **updates["finetune"]),
            synth=replace(base.synth, **updates["synth"]),
        )
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from None


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def config_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
