"""Training configuration: dataclasses, JSON schema and ``key=value`` overrides."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import jsonschema

from .losses import LossWeights
from .segnet import BackboneSpec


class ConfigError(ValueError):
    pass


@dataclass
class AugmentConfig:
    enabled: bool = True
    scale: tuple[float, float] = (0.5, 2.0)
    rotation: float = 10.0
    blur_prob: float = 0.5
    blur_sigma: tuple[float, float] = (0.3, 1.2)
    flip: bool = True


@dataclass
class BoundaryConfig:
    n_segments: int | None = None
    compactness: float = 10.0
    max_iters: int = 10
    dilation: int = 1
    reduce_threshold: float = 0.25


@dataclass
class TrainConfig:
    corpus: str = ""
    train_split: str = "train"
    val_split: str = "val"
    epochs: int = 30
    batch_size: int = 16
    lr: float = 0.02
    lr_power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    crop_size: int = 64
    transform_mode: str = "random"
    use_entropy: bool = True
    use_boundary: bool = True
    use_random_walk: bool = True
    ss_location: str = "eigenspace"
    smm_scale: float | None = None
    weights: LossWeights = field(default_factory=LossWeights)
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    boundary: BoundaryConfig = field(default_factory=BoundaryConfig)

    def __post_init__(self):
        if self.crop_size % self.backbone.stride:
            raise ConfigError(f"crop_size {self.crop_size} is not divisible by stride {self.backbone.stride}")
        if self.lr <= 0 or self.batch_size <= 0 or self.epochs < 0:
            raise ConfigError("lr and batch_size must be positive and epochs non-negative")

    @property
    def ss_active(self) -> bool:
        return self.ss_location != "none" and self.transform_mode != "none" and self.weights.omega2 > 0

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


_NUM = {"type": "number"}
_INT = {"type": "integer"}
_BOOL = {"type": "boolean"}
_PAIR = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "corpus": {"type": "string"},
        "train_split": {"type": "string"},
        "val_split": {"type": "string"},
        "epochs": {"type": "integer", "minimum": 0},
        "batch_size": {"type": "integer", "minimum": 1},
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "lr_power": _NUM,
        "momentum": {"type": "number", "minimum": 0, "maximum": 1},
        "weight_decay": {"type": "number", "minimum": 0},
        "seed": _INT,
        "crop_size": {"type": "integer", "minimum": 1},
        "transform_mode": {"enum": ["flip", "translation", "random", "none"]},
        "use_entropy": _BOOL,
        "use_boundary": _BOOL,
        "use_random_walk": _BOOL,
        "ss_location": {"enum": ["none", "f_pre", "f_post", "eigenspace"]},
        "smm_scale": {"type": ["number", "null"]},
        "weights": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "omega1": {"type": "number", "minimum": 0},
                "omega2": {"type": "number", "minimum": 0},
                "gamma": {"type": "number", "minimum": 0},
                "warmup_fraction": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "backbone": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["tiny_cnn", "external"]},
                "stride": {"type": "integer", "minimum": 1},
                "channels": {"type": "integer", "minimum": 1},
                "depth": {"type": "integer", "minimum": 1},
            },
        },
        "augment": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "enabled": _BOOL, "scale": _PAIR, "rotation": {"type": "number", "minimum": 0},
                "blur_prob": {"type": "number", "minimum": 0, "maximum": 1},
                "blur_sigma": _PAIR, "flip": _BOOL,
            },
        },
        "boundary": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "n_segments": {"type": ["integer", "null"], "minimum": 1},
                "compactness": {"type": "number", "exclusiveMinimum": 0},
                "max_iters": {"type": "integer", "minimum": 1},
                "dilation": {"type": "integer", "minimum": 0},
                "reduce_threshold": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
    },
}

_NESTED = {"weights": LossWeights, "backbone": BackboneSpec, "augment": AugmentConfig, "boundary": BoundaryConfig}


def config_from_dict(data: dict) -> TrainConfig:
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {exc.message}") from None
    kwargs = dict(data)
    try:
        for key, cls in _NESTED.items():
            if key in kwargs:
                sub = dict(kwargs[key])
                for name in ("scale", "blur_sigma"):
                    if name in sub:
                        sub[name] = tuple(sub[name])
                kwargs[key] = cls(**sub)
        return TrainConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> TrainConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(data)


def _known_keys(cls, prefix=""):
    keys = set()
    for f in fields(cls):
        default = f.default_factory() if callable(f.default_factory) else f.default
        if is_dataclass(default):
            keys |= _known_keys(type(default), prefix + f.name + ".")
        else:
            keys.add(prefix + f.name)
    return keys


def apply_overrides(data: dict, overrides: list[str], known: set[str] | None = None) -> dict:
    """Apply flat ``dotted.key=value`` overrides; values are parsed as JSON when possible.

    Unknown keys raise :class:`ConfigError`.
    """
    known = _known_keys(TrainConfig) if known is None else known
    out = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in known:
            raise ConfigError(f"unknown override key {key!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        *parents, leaf = key.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    return out
